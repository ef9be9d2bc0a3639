import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasaki_mcp.models import (SUB, CurvatureProfile, ModelError, SasakianModel, build_heisenberg, connection,
                               curvature_check, load_model, model_from_config, profile_matrix, structure_residuals,
                               tanaka_webster)


def unit(d, k):
    e = np.zeros(d)
    e[k] = 1.0
    return e


class TestBuildHeisenberg:
    def test_contact_form_on_x1_y1(self):
        m = build_heisenberg(1, 1.0)
        J = m.complex_structure()
        d_eta = m.d_contact_frame()
        X1, Y1 = unit(3, 0), unit(3, 1)
        assert d_eta[0, 1] == -1.0
        assert X1 @ m.metric() @ (J @ Y1) == -1.0

    def test_sub_model_has_same_frames(self):
        sub, one = build_heisenberg(1), build_heisenberg(1, 1.0)
        p = np.array([0.3, -1.2, 2.0])
        np.testing.assert_array_equal(sub.frame(p), one.frame(p))
        assert sub.is_sub and sub.epsilon == SUB

    def test_vertical_length_eps(self):
        m = build_heisenberg(2, 0.5)
        g = m.metric()
        V = unit(5, 4)
        assert np.sqrt(V @ g @ V) == pytest.approx(0.5)
        assert structure_residuals(m, n_points=10)["vertical_length"] < 1e-15

    @pytest.mark.parametrize("n, eps", [(0, SUB), (1, 0.0), (1, -1.0), (2, "eps"), (1.5, 1.0)])
    def test_rejects_bad_parameters(self, n, eps):
        with pytest.raises(ModelError):
            build_heisenberg(n, eps)

    @pytest.mark.parametrize("n", [1, 2, 3])
    @pytest.mark.parametrize("eps", [SUB, 0.5, 1.0, 2.0])
    def test_structure_identities(self, n, eps):
        res = structure_residuals(build_heisenberg(n, eps), n_points=10, seed=n)
        assert max(res.values()) < 1e-12

    def test_group_law_inverse_and_associativity(self):
        m = build_heisenberg(2)
        rng = np.random.default_rng(3)
        p, q, r = rng.normal(size=(3, 5))
        np.testing.assert_allclose(m.group_mul(m.group_mul(p, q), r), m.group_mul(p, m.group_mul(q, r)), atol=1e-14)
        np.testing.assert_allclose(m.group_mul(p, m.group_inv(p)), np.zeros(5), atol=1e-15)


class TestConnection:
    def setup_method(self):
        self.m = build_heisenberg(1, 1.0)
        self.nab = connection(self.m).covariant
        self.J = self.m.complex_structure()

    def test_nabla_x1_reeb(self):
        np.testing.assert_allclose(self.nab(unit(3, 0), unit(3, 2)), -0.5 * unit(3, 1), atol=1e-15)

    def test_nabla_reeb_of_j_vanishes(self):
        X1 = unit(3, 0)
        V = unit(3, 2)
        val = self.nab(V, self.J @ X1) - self.J @ self.nab(V, X1)
        np.testing.assert_allclose(val, 0, atol=1e-15)

    def test_nabla_j_on_x1(self):
        X1 = unit(3, 0)
        val = self.nab(X1, self.J @ X1) - self.J @ self.nab(X1, X1)
        np.testing.assert_allclose(val, 0.5 * unit(3, 2), atol=1e-15)

    @pytest.mark.parametrize("eps", [0.3, 1.0, 2.5])
    def test_koszul(self, eps):
        res = connection(build_heisenberg(2, eps)).koszul_residuals()
        assert res["metric"] < 1e-12 and res["torsion"] < 1e-12


class TestCurvature:
    @pytest.mark.parametrize("n", [1, 2])
    def test_all_identities(self, n):
        assert max(curvature_check(build_heisenberg(n, 1.0)).values()) < 1e-10

    def test_specific_components(self):
        m = build_heisenberg(1, 1.0)
        table = connection(m)
        tw = tanaka_webster(m, table)
        X1, Y1, V = (unit(3, k) for k in range(3))
        np.testing.assert_allclose(tw.riemann(X1, Y1, X1), 0, atol=1e-15)
        np.testing.assert_allclose(table.riemann(X1, Y1, V), 0, atol=1e-15)
        np.testing.assert_allclose(tw.riemann(X1, V, Y1), 0, atol=1e-15)

    def test_riemannian_curvature_is_not_flat(self):
        table = connection(build_heisenberg(1, 1.0))
        X1, Y1 = unit(3, 0), unit(3, 1)
        # sectional curvature of the X1–Y1 plane on H³ with |V| = 1 is −3/4
        assert table.riemann(X1, Y1, Y1) @ X1 == pytest.approx(-0.75)

    def test_requires_unit_reeb(self):
        with pytest.raises(ModelError):
            curvature_check(build_heisenberg(1, 0.5))


class TestProfiles:
    def test_flat_is_zero(self):
        np.testing.assert_array_equal(profile_matrix(CurvatureProfile.flat(2), 3.0, 0.4), np.zeros((5, 5)))

    def test_isotropic_values(self):
        np.testing.assert_array_equal(profile_matrix(CurvatureProfile.isotropic(1, 1.0), 2.0, 0.0), np.diag([0, 0, 4.0]))
        R = profile_matrix(CurvatureProfile.isotropic(2, 1.0), 1.0, 0.5)
        np.testing.assert_array_equal(R, np.diag([0, 0, 1.0, 1, 1]))
        assert np.trace(R[2:, 2:]) == 3.0

    def test_custom_asymmetric_rejected(self):
        def bad(t):
            R = np.zeros((3, 3))
            R[2, 2] = 1.0
            R[1, 2] = t
            return R

        with pytest.raises(ModelError):
            profile_matrix(CurvatureProfile.custom(1, bad), 1.0, 0.5)

    def test_custom_leading_block_rejected(self):
        with pytest.raises(ModelError):
            profile_matrix(CurvatureProfile.custom(1, lambda t: np.eye(3)), 1.0, 0.5)

    @given(k=st.floats(0, 5), a=st.floats(0, 5), t=st.floats(0, 1))
    def test_isotropic_shape_properties(self, k, a, t):
        R = profile_matrix(CurvatureProfile.isotropic(2, k), a, t)
        np.testing.assert_array_equal(R, R.T)
        assert not R[:2].any() and not R[:, :2].any()

    def test_config_roundtrip(self, tmp_path):
        m = SasakianModel(2, 0.5)
        prof = CurvatureProfile.isotropic(2, 0.7)
        path = tmp_path / "model.json"
        path.write_text(json.dumps(m.to_config(prof)))
        m2, prof2 = load_model(path)
        assert m2 == m and prof2 == prof

    def test_config_rejects_unknown_keys(self):
        with pytest.raises(ModelError):
            model_from_config({"n": 1, "colour": "red"})
        with pytest.raises(ModelError):
            model_from_config({"n": 1, "profile": {"kind": "flat", "rate": 1}})


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 3), eps=st.one_of(st.just(SUB), st.floats(0.1, 10)), seed=st.integers(0, 1000))
def test_contact_identity_random_points(n, eps, seed):
    assert structure_residuals(build_heisenberg(n, eps), n_points=3, seed=seed)["contact_metric"] < 1e-12
