import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasaki_mcp.geodesics import GeodesicInvariants
from sasaki_mcp.models import SUB, CurvatureProfile
from sasaki_mcp.riccati import (QuadratureError, RiccatiError, asymptotic_seed, batch_determinant_ratio,
                                build_coefficients, determinant_ratio, first_conjugate_tau, horizontal_laplacian,
                                lower_complex_structure, propagate_T, recover_S, reeb_pole_constant, riccati_residual,
                                s22_lower_bound_check, solve_S, volume_distortion)


def coeffs(a, b, n=1, variant=SUB, profile=None):
    return build_coefficients(GeodesicInvariants(a, b), n, profile, variant)


class TestCoefficients:
    def test_sub_unit(self):
        c = coeffs(1.0, 0.0)
        np.testing.assert_array_equal(c.E, np.diag([0.25, 0, -1.0]))
        np.testing.assert_array_equal(c.U, [[0, 0, -0.5], [0, 0, 0], [1, 0, 0]])
        np.testing.assert_array_equal(c.D, np.diag([0, 1.0, 1]))

    def test_sub_tail(self):
        c = coeffs(2.0, 1.0, n=2)
        np.testing.assert_array_equal(c.E[3:, 3:], 0.25 * np.eye(2))
        assert c.E[2, 2] == -3.75
        np.testing.assert_array_equal(c.U[:3, :3], [[0, 0, -1], [0, 0, 0.5], [2, -0.5, 0]])
        np.testing.assert_array_equal(c.U[3:, 3:], -0.5 * lower_complex_structure(2))

    def test_eps_one(self):
        c = coeffs(1.0, 0.0, variant=1.0)
        np.testing.assert_array_equal(c.D, np.eye(3))
        assert c.E[2, 2] == -0.75

    def test_eps_entries(self):
        eps, a, b = 0.5, 1.5, 0.8
        c = coeffs(a, b, n=2, variant=eps)
        assert c.D[0, 0] == pytest.approx(1 / eps**2)
        assert c.U[2, 0] == pytest.approx(-(1 - 2 * eps**2) * a / (2 * eps**2))
        np.testing.assert_allclose(c.U[3:, 3:], (1 - eps**2) * b / (2 * eps**2) * lower_complex_structure(2))

    @given(n=st.integers(1, 4))
    def test_lower_j(self, n):
        J = lower_complex_structure(n)
        np.testing.assert_array_equal(J + J.T, 0)
        np.testing.assert_array_equal(J @ J, -np.eye(2 * n - 2))

    @given(a=st.floats(0.01, 10), b=st.floats(-10, 10), eps=st.one_of(st.just(SUB), st.floats(0.1, 5)))
    def test_shapes_and_symmetry(self, a, b, eps):
        c = coeffs(a, b, n=2, variant=eps)
        np.testing.assert_array_equal(c.E, c.E.T)
        np.testing.assert_array_equal(c.D, c.D.T)
        assert np.linalg.eigvalsh(c.D).min() >= 0
        if eps != SUB:
            assert np.linalg.eigvalsh(c.D).min() > 0

    def test_rejects_zero_speed(self):
        with pytest.raises(RiccatiError):
            coeffs(0.0, 1.0)


class TestPropagateT:
    def test_starts_at_zero(self):
        T = propagate_T(coeffs(1.0, 0.0), np.linspace(0, 0.5, 11))
        np.testing.assert_array_equal(T.matrices[0], 0)

    def test_grid_must_start_at_zero(self):
        with pytest.raises(RiccatiError):
            propagate_T(coeffs(1.0, 0.0), [0.1, 0.2])

    @pytest.mark.parametrize("variant", [SUB, 0.5, 1.0, 2.0])
    def test_asymptotic_order(self, variant):
        c = coeffs(1.0, 0.0, variant=variant)
        tg = np.geomspace(1e-3, 1e-1, 15)
        T = propagate_T(c, np.concatenate([[0], tg]), max_step=1e-4)
        seed = asymptotic_seed(c)
        err = [np.linalg.norm(T.matrices[k + 1] - seed.T(t)) for k, t in enumerate(tg)]
        assert np.polyfit(np.log(tg), np.log(err), 1)[0] >= 3.9

    @pytest.mark.parametrize("variant", [SUB, 0.7])
    def test_ode_residual_and_symmetry(self, variant):
        c = coeffs(1.3, -0.6, n=2, variant=variant, profile=CurvatureProfile.isotropic(2, 0.5))
        T = propagate_T(c, np.linspace(0, 0.8, 161))
        assert riccati_residual(c, T).max() < 1e-7
        assert T.symmetry_defect() <= 1e-10

    def test_b_zero_decouples(self):
        T = propagate_T(coeffs(1.0, 0.0, n=2), np.linspace(0, 0.9, 91))
        assert np.abs(T.matrices[:, :3, 3:]).max() <= 1e-12


class TestSeed:
    def test_sub_display(self):
        seed = asymptotic_seed(coeffs(2.0, 0.0))
        np.testing.assert_array_equal(seed.T1, np.diag([0, 1.0, 1]))
        assert seed.T2[0, 2] == 1.0 and seed.T2[2, 0] == 1.0
        np.testing.assert_allclose(seed.T3, np.diag([4 / 3, 0, -2]), atol=1e-15)

    def test_sub_top_block(self):
        a, b = 1.5, 0.4
        T3 = asymptotic_seed(coeffs(a, b)).T3
        np.testing.assert_allclose(T3[:2, :2], [[a * a / 3, -a * b / 12], [-a * b / 12, b * b / 12]], atol=1e-15)

    def test_eps_one_second_order_vanishes(self):
        np.testing.assert_array_equal(asymptotic_seed(coeffs(1.7, 0.3, variant=1.0)).T2[0], 0)

    def test_eps_second_order(self):
        eps, a = 0.5, 1.2
        T2 = asymptotic_seed(coeffs(a, 0.3, variant=eps)).T2
        assert T2[0, 2] == pytest.approx(-(1 - eps**2) * a / (2 * eps**2))

    def test_curvature_enters_third_order(self):
        flat = asymptotic_seed(coeffs(2.0, 0.0, n=2)).T3
        curved = asymptotic_seed(coeffs(2.0, 0.0, n=2, profile=CurvatureProfile.isotropic(2, 1.0))).T3
        np.testing.assert_allclose(np.diag(curved - flat)[3:], 4.0 / 3)


class TestRecoverS:
    def test_flat_sub_limits(self):
        t = np.array([0.0, 1e-3, 2e-3, 4e-3])
        S = recover_S(propagate_T(coeffs(1.0, 0.0), t, max_step=1e-5))
        # S.times are s = 1 − t in increasing order; index −2 is t = 1e-3
        s_small = S.matrices[-2]
        assert s_small[0, 0] * 1e-3**3 == pytest.approx(-12, rel=1e-2)
        assert s_small[2, 2] * 1e-3 == pytest.approx(-4, rel=1e-2)
        assert s_small[1, 1] * 1e-3 == pytest.approx(-1, rel=1e-2)

    def test_eps_limit(self):
        t = np.array([0.0, 1e-3])
        S = recover_S(propagate_T(coeffs(1.0, 0.0, variant=0.5), t, max_step=1e-5))
        assert S.matrices[0, 0, 0] * 1e-3 == pytest.approx(-0.25, rel=1e-2)

    def test_singular_start_flagged(self):
        S = recover_S(propagate_T(coeffs(1.0, 0.0), np.linspace(0, 0.5, 6)))
        assert not S.valid[-1]
        assert S.notes

    def test_linear_route_matches(self):
        c = coeffs(1.2, 0.9, n=2, variant=0.8)
        t = np.linspace(0, 0.8, 9)
        viaT = recover_S(propagate_T(c, t, max_step=1e-4))
        direct = solve_S(c, viaT.times[:-1])
        np.testing.assert_allclose(direct.matrices, viaT.matrices[:-1], rtol=1e-8, atol=1e-8)


class TestLaplacianAndVolume:
    def test_horizontal_laplacian(self):
        assert horizontal_laplacian(np.eye(3)) == 2.0
        assert horizontal_laplacian(np.eye(3), 0.5) == pytest.approx(6.0)
        assert horizontal_laplacian(np.diag([5.0, 0, 0])) == 0.0

    def test_volume_distortion_matches_linear_route(self):
        c = coeffs(1.4, 0.8, n=1)
        s = np.linspace(0, 0.9, 721)
        det = volume_distortion(solve_S(c, s), tol=1e-7)
        assert det(0.0) == 1.0
        t = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
        np.testing.assert_allclose(det(t), determinant_ratio(c, t), rtol=1e-6)

    def test_volume_distortion_coarse_grid(self):
        c = coeffs(1.4, 5.0, n=1)
        with pytest.raises(QuadratureError):
            volume_distortion(solve_S(c, np.linspace(0, 0.9, 7)), tol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(0.1, 4), b=st.floats(-6, 6))
    def test_flat_h3_bound(self, a, b):
        c = coeffs(a, b)
        if first_conjugate_tau(c, samples=201) is not None:
            return
        t = np.linspace(0.1, 0.9, 9)
        assert np.all(determinant_ratio(c, t) >= (1 - t) ** 5 - 1e-6)

    def test_batch_matches_single(self):
        a = np.array([0.5, 1.0, 2.0])
        b = np.array([0.3, -2.0, 4.0])
        t = np.array([0.0, 0.25, 0.5, 0.75])
        batch = batch_determinant_ratio(a, b, 2, 0.6, CurvatureProfile.isotropic(2, 0.5), t)
        for k in range(3):
            single = determinant_ratio(coeffs(a[k], b[k], 2, 0.6, CurvatureProfile.isotropic(2, 0.5)), t)
            np.testing.assert_allclose(batch[k], single, rtol=1e-10)


class TestBounds:
    def test_flat_sub(self):
        S = solve_S(coeffs(1.0, 0.0), np.linspace(0.01, 0.95, 95))
        assert s22_lower_bound_check(S)["min_slack"] >= -1e-8

    def test_equality_trend(self):
        S = solve_S(coeffs(1.0, 0.0), [1 - 1e-4])
        assert S.matrices[0, 1, 1] * 1e-4 == pytest.approx(-1, rel=1e-3)

    def test_eps(self):
        S = solve_S(coeffs(1.0, 0.5, variant=0.7), np.linspace(0.0, 0.99, 100))
        assert s22_lower_bound_check(S, 0.7)["pass"]


class TestComparisonMonotonicity:
    @pytest.mark.parametrize("variant", [SUB, 0.8])
    def test_more_curvature_means_larger_s(self, variant):
        s = np.linspace(0, 0.95, 40)
        flat = solve_S(coeffs(1.2, 0.7, 2, variant), s)
        curved = solve_S(coeffs(1.2, 0.7, 2, variant, CurvatureProfile.isotropic(2, 1.0)), s)
        ok = flat.valid & curved.valid
        gap = np.linalg.eigvalsh(curved.matrices[ok] - flat.matrices[ok])[:, 0]
        assert gap.min() >= -1e-8


class TestReebPoleConstant:
    @pytest.mark.parametrize("variant", [SUB, 0.5])
    @pytest.mark.parametrize("n", [1, 2])
    def test_independent_of_fit_window(self, n, variant):
        c = coeffs(1.0, 1.5, n=n, variant=variant)
        assert reeb_pole_constant(c, (0.01, 0.1)) == pytest.approx(reeb_pole_constant(c, (0.02, 0.2)), abs=1e-6)


class TestConjugate:
    def test_known_conjugate_configuration(self):
        tau = first_conjugate_tau(coeffs(1.0, 6.4))
        assert tau == pytest.approx(0.982, abs=2e-3)

    def test_conjugate_free(self):
        assert first_conjugate_tau(coeffs(1.0, 6.2)) is None

    def test_tail_conjugate_with_curvature(self):
        c = coeffs(3.0, -2.0, n=2, profile=CurvatureProfile.isotropic(2, 1.0))
        assert first_conjugate_tau(c) == pytest.approx(0.9935, abs=2e-3)
