"""Measure contraction on Heisenberg models: Jacobian oracle, Monte-Carlo contraction, Laplacian bound.

The contraction map sends x to the point at time t on the minimizing geodesic from x
to a fixed center.  Its Jacobian determinant is available two ways: finite differences
of the closed-form geodesics (``jacobian_oracle``) and the Riccati determinant ratio
(``riccati.batch_determinant_ratio``).
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geodesics import GeodesicInvariants, connecting_covector, frame_momenta, heisenberg_exponential
from .models import CurvatureProfile, SasakianModel, build_heisenberg, is_sub
from .riccati import batch_determinant_ratio, build_coefficients, horizontal_laplacian, solve_S

CHUNK = 8192
NEAR_CONJUGATE = 0.25  # flag |θ| within this of 2π


class ContractionAbort(RuntimeError):
    pass


@dataclass
class ContractionExperiment:
    """Uniform samples from a box {"kind": "box", "lo", "hi"} or ball {"kind": "ball", "center", "radius"}."""

    model: SasakianModel
    center: np.ndarray
    set_spec: dict
    t_grid: np.ndarray
    samples: int
    seed: int = 0
    profile: CurvatureProfile | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.t_grid = np.asarray(self.t_grid, float)
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if np.any(self.t_grid < 0) or np.any(self.t_grid >= 1):
            raise ValueError("t_grid must lie in [0, 1)")
        kind = self.set_spec.get("kind")
        d = self.model.dim
        if kind == "box":
            lo, hi = np.asarray(self.set_spec["lo"], float), np.asarray(self.set_spec["hi"], float)
            if lo.shape != (d,) or hi.shape != (d,) or np.any(hi <= lo):
                raise ValueError("box needs lo < hi in every coordinate")
        elif kind == "ball":
            if float(self.set_spec["radius"]) <= 0 or np.shape(self.set_spec["center"]) != (d,):
                raise ValueError("ball needs a positive radius and a center of the model dimension")
        else:
            raise ValueError(f"unknown set kind {kind!r}")

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        d = self.model.dim
        if self.set_spec["kind"] == "box":
            lo, hi = np.asarray(self.set_spec["lo"], float), np.asarray(self.set_spec["hi"], float)
            return lo + (hi - lo) * rng.random((count, d))
        c = np.asarray(self.set_spec["center"], float)
        g = rng.standard_normal((count, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = float(self.set_spec["radius"]) * rng.random(count) ** (1.0 / d)
        return c + g * rad[:, None]


@dataclass
class DistortionSample:
    start: np.ndarray
    covector: np.ndarray
    t_values: np.ndarray
    det: np.ndarray
    valid: bool

    def __post_init__(self):
        zero = np.nonzero(self.t_values == 0)[0]
        if len(zero) and self.valid and abs(self.det[zero[0]] - 1) > 1e-9:
            raise ValueError("determinant at t = 0 must be 1")


def contraction_map(model: SasakianModel, points, center, t) -> np.ndarray:
    """φ_t(x) for an array of points x toward `center`."""
    n = model.n
    shot = connecting_covector(n, points, center, model.epsilon)
    return heisenberg_exponential(n, shot.covector, t, model.epsilon, start=points)


def _fd_jacobian_det(model: SasakianModel, points, center, t, h) -> np.ndarray:
    """Central-difference Jacobian determinants at step h, vectorized over points."""
    points = np.atleast_2d(points)
    B, d = points.shape
    E = np.eye(d) * h
    plus = points[:, None, :] + E[None]
    minus = points[:, None, :] - E[None]
    stack = np.concatenate([plus, minus], axis=1).reshape(-1, d)
    center_rep = np.broadcast_to(center, (B, d))
    center_rep = np.repeat(center_rep, 2 * d, axis=0)
    img = contraction_map(model, stack, center_rep, t).reshape(B, 2 * d, d)
    J = (img[:, :d] - img[:, d:]) / (2 * h)
    # column k of J is ∂φ/∂x_k
    return np.linalg.det(np.swapaxes(J, 1, 2))


def jacobian_oracle(model: SasakianModel, start, covector, t, h: float = 1e-3) -> dict:
    """det dφ_t at `start` by finite differences of closed-form geodesics with Richardson refinement.

    Steps h and h/2 are combined as (4D(h/2) − D(h))/3.  For t near 1 the determinant is
    tiny while coordinates are O(1), so steps much below 1e-3 lose digits to rounding.

    The center is the endpoint of the geodesic with `covector`; every perturbed start is
    re-shot to it.  Broadcasts over leading axes of `start`/`covector`.
    """
    n = model.n
    start = np.atleast_2d(np.asarray(start, float))
    covector = np.atleast_2d(np.asarray(covector, float))
    start, covector = np.broadcast_arrays(start, covector)
    center = heisenberg_exponential(n, covector, 1.0, model.epsilon, start=start)
    if t == 0:
        return {"det": np.ones(len(start)), "near_conjugate": np.zeros(len(start), bool)}
    theta = frame_momenta(n, start, covector)[:, 2 * n]
    near = np.abs(theta) > 2 * np.pi - NEAR_CONJUGATE
    dets = []
    for pts, ctr in zip(start, center):
        coarse = _fd_jacobian_det(model, pts, ctr, t, h)[0]
        fine = _fd_jacobian_det(model, pts, ctr, t, h / 2)[0]
        dets.append((4 * fine - coarse) / 3)
    return {"det": np.array(dets), "near_conjugate": near}


def riccati_determinants(model: SasakianModel, starts, center, t_values,
                         profile: CurvatureProfile | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(det array (B, len(t)), covectors, valid) from the Riccati route for geodesics toward `center`."""
    n = model.n
    starts = np.atleast_2d(np.asarray(starts, float))
    shot = connecting_covector(n, starts, center, model.epsilon)
    h = frame_momenta(n, starts, shot.covector)
    a = np.linalg.norm(h[:, : 2 * n], axis=1)
    b = h[:, 2 * n]
    valid = shot.valid & (a > 0)
    det = np.full((len(starts), len(np.atleast_1d(t_values))), np.nan)
    if np.any(valid):
        det[valid] = batch_determinant_ratio(a[valid], b[valid], n, model.epsilon, profile, t_values)
    return det, shot.covector, valid


def distortion_samples(model: SasakianModel, starts, center, t_values) -> list[DistortionSample]:
    t_values = np.asarray(t_values, float)
    det, cov, valid = riccati_determinants(model, starts, center, t_values)
    return [DistortionSample(s, c, t_values, d, bool(v)) for s, c, d, v in zip(np.atleast_2d(starts), cov, det, valid)]


def _thread_count() -> int:
    raw = os.environ.get("SASAKI_MCP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _chunk_rng(seed: int, index: int) -> np.random.Generator:
    # a counter-based stream per fixed-size chunk keeps results independent of threading
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & (2**64 - 1), index])))


def mc_contraction(exp: ContractionExperiment, N: float, csv_path=None, json_path=None) -> dict:
    """Monte-Carlo estimate of vol(φ_t(U))/vol(U) as the mean of det dφ_t over uniform points of U."""
    t = exp.t_grid
    n_chunks = -(-exp.samples // CHUNK)

    def work(k):
        count = min(CHUNK, exp.samples - k * CHUNK)
        pts = exp.draw(_chunk_rng(exp.seed, k), count)
        det, _, valid = riccati_determinants(exp.model, pts, exp.center, t, exp.profile)
        return det, valid

    threads = _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(n_chunks)))
    else:
        parts = [work(k) for k in range(n_chunks)]
    det = np.concatenate([p[0] for p in parts])
    valid = np.concatenate([p[1] for p in parts])
    fail_rate = 1.0 - valid.mean()
    if fail_rate > 0.01:
        raise ContractionAbort(f"{fail_rate:.2%} of samples failed to shoot to the center")
    good = det[valid]
    mean = good.mean(axis=0)
    stderr = good.std(axis=0, ddof=1) / np.sqrt(len(good)) if len(good) > 1 else np.zeros(len(t))
    bound = (1.0 - t) ** N
    slack = mean - bound + 3 * stderr
    rows = [{"t": float(a), "ratio_estimate": float(b), "stderr": float(c), "bound": float(d), "slack": float(e)}
            for a, b, c, d, e in zip(t, mean, stderr, bound, slack)]
    report = {"pass": bool(np.all(slack >= 0)), "N": N, "samples": int(exp.samples),
              "valid_samples": int(valid.sum()), "min_slack": float(slack.min()),
              "t_worst": float(t[int(np.argmin(slack))]), "rows": rows}
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "ratio_estimate", "stderr", "bound", "slack"])
            for r in rows:
                w.writerow([repr(r[k]) for k in ("t", "ratio_estimate", "stderr", "bound", "slack")])
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({k: report[k] for k in ("pass", "N", "samples", "valid_samples", "min_slack", "t_worst")},
                      fh, indent=2)
    return report


def squared_distance(model: SasakianModel, points, center) -> np.ndarray:
    """d²(x, center) on the minimizing branch: twice the Hamiltonian of the connecting covector."""
    n = model.n
    points = np.atleast_2d(np.asarray(points, float))
    shot = connecting_covector(n, points, center, model.epsilon)
    h = frame_momenta(n, points, shot.covector)
    d2 = np.sum(h[:, : 2 * n] ** 2, axis=1)
    if not is_sub(model.epsilon):
        d2 = d2 + h[:, 2 * n] ** 2 / float(model.epsilon) ** 2
    return d2


def laplacian_of_squared_distance(model: SasakianModel, points, center=None) -> tuple[np.ndarray, np.ndarray]:
    """Δ_H d²(·, center) = −2 Δ_H f₀ at each point from the Riccati solution at s = 0.

    Returns (values, valid); points on the cut locus or too near a conjugate angle are invalid.
    """
    n = model.n
    center = np.zeros(model.dim) if center is None else np.asarray(center, float)
    points = np.atleast_2d(np.asarray(points, float))
    shot = connecting_covector(n, points, center, model.epsilon)
    h = frame_momenta(n, points, shot.covector)
    a = np.linalg.norm(h[:, : 2 * n], axis=1)
    b = h[:, 2 * n]
    valid = shot.valid & (a > 0) & (np.abs(shot.theta) < 2 * np.pi - NEAR_CONJUGATE)
    out = np.full(len(points), np.nan)
    for k in np.nonzero(valid)[0]:
        S = solve_S(build_coefficients(GeodesicInvariants(a[k], b[k]), n, None, model.epsilon), [0.0])
        if not S.valid[0]:
            valid[k] = False
            continue
        out[k] = -2.0 * horizontal_laplacian(S.matrices[0], model.epsilon)
    return out, valid


def laplacian_comparison_check(model: SasakianModel, points, N: float, center=None, tol: float = 1e-3) -> dict:
    """Check Δ_H d² ≤ 2N + tol at every usable point; cut-locus points are skipped with a notice."""
    vals, valid = laplacian_of_squared_distance(model, points, center)
    notices = [f"skipped point {i}: cut locus or near-conjugate" for i in np.nonzero(~valid)[0]]
    if not np.any(valid):
        return {"pass": False, "max": float("nan"), "bound": 2 * N, "checked": 0, "notices": notices}
    worst = float(np.nanmax(vals[valid]))
    return {"pass": bool(worst <= 2 * N + tol), "max": worst, "bound": 2 * N, "checked": int(valid.sum()),
            "values": vals.tolist(), "notices": notices}


def fd_sub_laplacian(model: SasakianModel, f, points, h: float = 1e-4) -> np.ndarray:
    """Σ (X_i² + Y_i²) f by second differences along right translations x·(±h e_k)."""
    n = model.n
    points = np.atleast_2d(np.asarray(points, float))
    base = f(points)
    total = np.zeros(len(points))
    for k in range(2 * n):
        e = np.zeros(model.dim)
        e[k] = h
        total += (f(model.group_mul(points, e)) - 2 * base + f(model.group_mul(points, -e))) / h**2
    return total


def heisenberg_contraction_defaults(n: int) -> dict:
    """Unit box at distance 3 from the origin and the sharp exponent 2n + 3."""
    lo = np.zeros(2 * n + 1)
    lo[0] = 3.0
    return {"center": np.zeros(2 * n + 1), "set_spec": {"kind": "box", "lo": lo, "hi": lo + 1.0},
            "N": 2 * n + 3, "model": build_heisenberg(n)}
