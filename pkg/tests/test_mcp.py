import json

import numpy as np
import pytest

from sasaki_mcp import mcp
from sasaki_mcp.geodesics import connecting_covector, heisenberg_exponential
from sasaki_mcp.models import SUB, build_heisenberg
from sasaki_mcp.mcp import (ContractionAbort, ContractionExperiment, DistortionSample, contraction_map,
                            fd_sub_laplacian, heisenberg_contraction_defaults, jacobian_oracle,
                            laplacian_comparison_check, laplacian_of_squared_distance, mc_contraction,
                            riccati_determinants, squared_distance)

T_GRID = np.array([0.1, 0.3, 0.5, 0.7, 0.9])


def random_pairs(n, count, seed):
    rng = np.random.default_rng(seed)
    starts = rng.uniform(-1, 1, (count, 2 * n + 1))
    centers = rng.uniform(-1, 1, (count, 2 * n + 1))
    return starts, centers


class TestContractionMap:
    def test_endpoints(self):
        m = build_heisenberg(1)
        pts = np.array([[3.2, 0.4, 0.1], [3.9, 0.9, 0.8]])
        np.testing.assert_allclose(contraction_map(m, pts, np.zeros(3), 0.0), pts, atol=1e-15)
        np.testing.assert_allclose(contraction_map(m, pts, np.zeros(3), 1.0), 0, atol=1e-12)

    def test_squared_distance_of_straight_line(self):
        m = build_heisenberg(1)
        assert squared_distance(m, np.array([3.0, 4.0, 0.0]), np.zeros(3))[0] == pytest.approx(25.0)


class TestJacobianOracle:
    def test_identity_at_zero(self):
        out = jacobian_oracle(build_heisenberg(1), np.zeros(3), np.array([1.0, 0.5, 2.0]), 0.0)
        assert out["det"][0] == 1.0

    @pytest.mark.parametrize("n", [1, 2])
    def test_sub_agreement(self, n):
        model = build_heisenberg(n)
        starts, centers = random_pairs(n, 4, seed=n)
        det, cov, valid = riccati_determinants(model, starts, centers[0], T_GRID)
        assert valid.all()
        for k, t in enumerate(T_GRID):
            oracle = jacobian_oracle(model, starts, cov, t)["det"]
            np.testing.assert_allclose(oracle, det[:, k], atol=1e-6, rtol=1e-6)

    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
    def test_eps_agreement(self, eps):
        model = build_heisenberg(1, eps)
        starts, centers = random_pairs(1, 3, seed=7)
        det, cov, valid = riccati_determinants(model, starts, centers[1], T_GRID)
        assert valid.all()
        for k, t in enumerate(T_GRID):
            np.testing.assert_allclose(jacobian_oracle(model, starts, cov, t)["det"], det[:, k], atol=1e-5,
                                       rtol=1e-5)

    def test_near_conjugate_flag_and_trend(self):
        model = build_heisenberg(1)
        dets, flags = [], []
        for theta in (3.0, 5.0, 6.0, 6.2):
            out = jacobian_oracle(model, np.zeros(3), np.array([1.0, 0.0, theta]), 0.9)
            dets.append(out["det"][0])
            flags.append(out["near_conjugate"][0])
        assert flags == [False, False, False, True]
        # det Y(1) in the denominator vanishes at the conjugate angle 2π, so the ratio grows
        assert np.all(np.diff(dets) > 0)


class TestDistortionSample:
    def test_rejects_bad_start_value(self):
        with pytest.raises(ValueError):
            DistortionSample(np.zeros(3), np.ones(3), np.array([0.0, 0.5]), np.array([0.9, 0.5]), True)

    def test_invalid_samples_skip_check(self):
        DistortionSample(np.zeros(3), np.ones(3), np.array([0.0]), np.array([np.nan]), False)

    def test_samples_from_riccati(self):
        samples = mcp.distortion_samples(build_heisenberg(1), np.array([[3.2, 0.1, 0.3]]), np.zeros(3),
                                         [0.0, 0.5])
        assert samples[0].det[0] == pytest.approx(1.0, abs=1e-12)


class TestExperiment:
    def test_ball_draw(self):
        m = build_heisenberg(1)
        exp = ContractionExperiment(m, np.zeros(3), {"kind": "ball", "center": [3, 0, 0], "radius": 0.5}, [0.5], 10)
        pts = exp.draw(np.random.default_rng(0), 1000)
        assert np.linalg.norm(pts - [3, 0, 0], axis=1).max() <= 0.5

    @pytest.mark.parametrize("spec", [{"kind": "box", "lo": [0, 0, 0], "hi": [1, 0, 1]},
                                      {"kind": "ball", "center": [0, 0, 0], "radius": 0.0},
                                      {"kind": "cube"}])
    def test_bad_sets(self, spec):
        with pytest.raises(ValueError):
            ContractionExperiment(build_heisenberg(1), np.zeros(3), spec, [0.5], 10)

    def test_bad_times(self):
        d = heisenberg_contraction_defaults(1)
        with pytest.raises(ValueError):
            ContractionExperiment(d["model"], d["center"], d["set_spec"], [0.5, 1.0], 10)


def small_experiment(n, samples=3000, t=(0.0, 0.5), seed=0):
    d = heisenberg_contraction_defaults(n)
    return ContractionExperiment(d["model"], d["center"], d["set_spec"], np.array(t), samples, seed), d["N"]


class TestMonteCarlo:
    def test_ratio_one_at_zero(self):
        exp, N = small_experiment(1)
        rows = mc_contraction(exp, N)["rows"]
        assert rows[0]["ratio_estimate"] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2])
    def test_passes_midway(self, n):
        exp, N = small_experiment(n)
        rep = mc_contraction(exp, N)
        assert rep["pass"] and rep["valid_samples"] == rep["samples"]

    def test_thread_count_does_not_change_result(self, monkeypatch, tmp_path):
        exp, N = small_experiment(1, samples=20_000, t=(0.5, 0.9))
        out = []
        for threads in ("1", "4"):
            monkeypatch.setenv("SASAKI_MCP_THREADS", threads)
            path = tmp_path / f"mc{threads}.csv"
            mc_contraction(exp, N, csv_path=path)
            out.append(path.read_bytes())
        assert out[0] == out[1]

    def test_abort_on_failures(self, monkeypatch):
        real = mcp.riccati_determinants

        def flaky(*args, **kwargs):
            det, cov, valid = real(*args, **kwargs)
            valid[::20] = False
            return det, cov, valid

        monkeypatch.setattr(mcp, "riccati_determinants", flaky)
        exp, N = small_experiment(1, samples=1000)
        with pytest.raises(ContractionAbort):
            mc_contraction(exp, N)

    def test_output_files(self, tmp_path):
        exp, N = small_experiment(1, samples=500, t=(0.1, 0.5))
        rep = mc_contraction(exp, N, tmp_path / "mc.csv", tmp_path / "mc.json")
        lines = (tmp_path / "mc.csv").read_text().splitlines()
        assert lines[0] == "t,ratio_estimate,stderr,bound,slack"
        assert len(lines) == 3
        summary = json.loads((tmp_path / "mc.json").read_text())
        assert summary["N"] == 5 and summary["pass"] == rep["pass"]

    def test_bound_values(self):
        exp, N = small_experiment(1, samples=100, t=(0.5,))
        assert mc_contraction(exp, N)["rows"][0]["bound"] == 0.5**5


class TestLaplacian:
    @pytest.mark.parametrize("n", [1, 2])
    def test_equals_bound_on_horizontal_plane(self, n):
        p = np.zeros(2 * n + 1)
        p[0] = 3.0
        vals, valid = laplacian_of_squared_distance(build_heisenberg(n), p)
        assert valid[0]
        assert vals[0] == pytest.approx(2 * (2 * n + 3), abs=1e-8)

    def test_random_points_below_bound(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-2, 2, (100, 3))
        rep = laplacian_comparison_check(build_heisenberg(1), pts, 5)
        assert rep["pass"] and rep["checked"] >= 95

    @pytest.mark.parametrize("lam", [0.5, 2.0])
    def test_dilation_invariance(self, lam):
        pts = np.array([[0.7, -0.3, 0.4], [1.5, 0.2, -0.9]])
        scaled = pts * [lam, lam, lam**2]
        m = build_heisenberg(1)
        np.testing.assert_allclose(laplacian_of_squared_distance(m, scaled)[0],
                                   laplacian_of_squared_distance(m, pts)[0], rtol=1e-9)

    def test_matches_finite_differences(self):
        m = build_heisenberg(1)
        pts = np.array([[0.7, -0.3, 0.4], [1.5, 0.2, -0.9], [-0.4, 1.1, 0.2]])
        d2 = lambda x: squared_distance(m, x, np.zeros(3))  # noqa: E731
        np.testing.assert_allclose(fd_sub_laplacian(m, d2, pts, h=1e-3),
                                   laplacian_of_squared_distance(m, pts)[0], atol=1e-4)

    def test_cut_locus_skipped(self):
        rep = laplacian_comparison_check(build_heisenberg(1), np.array([[0, 0, 1.0], [3, 0, 0]]), 5)
        assert rep["checked"] == 1 and rep["notices"] == ["skipped point 0: cut locus or near-conjugate"]


def test_shooting_covector_reaches_center():
    starts, centers = random_pairs(1, 5, seed=3)
    shot = connecting_covector(1, starts, centers[0], SUB)
    np.testing.assert_allclose(heisenberg_exponential(1, shot.covector, 1.0, SUB, start=starts),
                               np.broadcast_to(centers[0], starts.shape), atol=1e-10)
