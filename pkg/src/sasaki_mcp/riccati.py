"""Matrix Riccati system along a geodesic contraction and the volume-distortion determinant.

Frame order is (Reeb, gradient direction, J-gradient direction, rest).  The
Hessian S(s) of f_s solves a Riccati equation with a singular endpoint at
s = 1, so we work in reversed time τ = 1 − s with T(τ) = −S(1 − τ)^{-1}:

    T' = T U + Uᵀ T + T M(τ) T + D,   T(0) = 0,   M(τ) = R̄(1 − τ) + E.

T itself has poles wherever S is singular.  The linear form T = Y Z^{-1},

    Y' = Uᵀ Y + D Z,   Z' = −M Y − U Z,   Y(0) = 0, Z(0) = I,

stays finite, gives S(1 − τ) = −Z Y^{-1}, and since tr U = 0 also gives
d/dτ log det Y = −tr(D S(1 − τ)), the integrand of the determinant formula.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline
from scipy.linalg import expm

from .geodesics import GeodesicInvariants
from .models import SUB, CurvatureProfile, Epsilon, is_sub, profile_matrix

COND_LIMIT = 1e12


class RiccatiError(ValueError):
    pass


class RiccatiBlowUp(RiccatiError):
    def __init__(self, time: float, partial: "MatrixTrajectory"):
        super().__init__(f"Riccati solution blew up near reversed time {time:.6g}")
        self.time = time
        self.partial = partial


class QuadratureError(RiccatiError):
    pass


class BoundViolation(AssertionError):
    pass


def lower_complex_structure(n: int) -> np.ndarray:
    """J_{2n−2} = [[0, 1], [−1, 0]] ⊕ … on the frame tail."""
    m = 2 * n - 2
    J = np.zeros((m, m))
    for i in range(0, m, 2):
        J[i, i + 1] = 1.0
        J[i + 1, i] = -1.0
    return J


def coefficient_arrays(a, b, n: int, variant: Epsilon = SUB):
    """U, E, D for arrays of invariants (a, b); shapes (..., d, d)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    a, b = np.broadcast_arrays(a, b)
    d = 2 * n + 1
    U = np.zeros(a.shape + (d, d))
    E = np.zeros(a.shape + (d, d))
    D = np.zeros(a.shape + (d, d))
    U[..., 0, 2] = -a / 2
    U[..., 1, 2] = b / 2
    U[..., 2, 1] = -b / 2
    E[..., 0, 0] = a**2 / 4
    E[..., 0, 1] = E[..., 1, 0] = -a * b / 4
    E[..., 1, 1] = b**2 / 4
    idx = np.arange(3, d)
    E[..., idx, idx] = (b**2 / 4)[..., None]
    if is_sub(variant):
        U[..., 2, 0] = a
        E[..., 2, 2] = -(a**2) + b**2 / 4
        tail_rate = -b / 2
        D[..., idx, idx] = 1.0
        D[..., 1, 1] = D[..., 2, 2] = 1.0
    else:
        e2 = float(variant) ** 2
        U[..., 2, 0] = -(1 - 2 * e2) * a / (2 * e2)
        E[..., 2, 2] = b**2 / 4 - a**2 + a**2 / (4 * e2)
        tail_rate = (1 - e2) * b / (2 * e2)
        D[..., 0, 0] = 1 / e2
        D[..., idx, idx] = 1.0
        D[..., 1, 1] = D[..., 2, 2] = 1.0
    for i in range(3, d, 2):
        U[..., i, i + 1] = tail_rate
        U[..., i + 1, i] = -tail_rate
    return U, E, D


@dataclass(frozen=True)
class RiccatiCoefficients:
    U: np.ndarray
    E: np.ndarray
    D: np.ndarray
    profile: CurvatureProfile
    inv: GeodesicInvariants
    variant: Epsilon
    J_lower: np.ndarray

    @property
    def n(self) -> int:
        return self.profile.n

    @property
    def dim(self) -> int:
        return self.U.shape[0]

    def curvature(self, s: float) -> np.ndarray:
        """R̄ at forward time s."""
        return profile_matrix(self.profile, self.inv.a, s)

    def potential(self, tau: float) -> np.ndarray:
        """M(τ) = R̄(1 − τ) + E."""
        return self.curvature(1.0 - tau) + self.E

    def riccati_rhs(self, tau: float, T: np.ndarray) -> np.ndarray:
        return T @ self.U + self.U.T @ T + T @ self.potential(tau) @ T + self.D

    def linear_generator(self, tau: float) -> np.ndarray:
        return np.block([[self.U.T, self.D], [-self.potential(tau), -self.U]])


def build_coefficients(inv: GeodesicInvariants, n: int, profile: CurvatureProfile | None = None,
                       variant: Epsilon = SUB) -> RiccatiCoefficients:
    if not inv.a > 0:
        raise RiccatiError("the Riccati frame needs a > 0")
    profile = profile or CurvatureProfile.flat(n)
    if profile.n != n:
        raise RiccatiError("profile dimension does not match n")
    U, E, D = coefficient_arrays(inv.a, inv.b, n, variant)
    return RiccatiCoefficients(U, E, D, profile, inv, variant, lower_complex_structure(n))


@dataclass
class MatrixTrajectory:
    """Symmetric matrices sampled at increasing times; invalid samples hold NaN."""

    times: np.ndarray
    matrices: np.ndarray
    valid: np.ndarray
    kind: str = "S"
    variant: Epsilon = SUB
    a: float | None = None
    notes: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def entry(self, i: int, j: int) -> np.ndarray:
        return self.matrices[:, i, j]

    def symmetry_defect(self) -> float:
        M = self.matrices[self.valid]
        if len(M) == 0:
            return 0.0
        return float(np.abs(M - np.swapaxes(M, 1, 2)).max())

    def laplacians(self) -> np.ndarray:
        return np.array([horizontal_laplacian(S, self.variant) if ok else np.nan
                         for S, ok in zip(self.matrices, self.valid)])

    def to_csv(self, path, det: np.ndarray | None = None) -> None:
        d = self.matrices.shape[1]
        iu = np.triu_indices(d)
        header = ["t"] + [f"S_{i}{j}" for i, j in zip(*iu)] + ["laplacian", "det"]
        lap = self.laplacians()
        det = np.full(len(self.times), np.nan) if det is None else det
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                row = [t, *self.matrices[k][iu], lap[k], det[k]]
                w.writerow([repr(float(v)) for v in row])


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _substeps(t_grid, max_step):
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        m = max(1, int(np.ceil((t1 - t0) / max_step - 1e-12)))
        yield t0, (t1 - t0) / m, m


def propagate_T(coeffs: RiccatiCoefficients, t_grid, max_step: float = 1e-3) -> MatrixTrajectory:
    """RK4 on the Riccati equation for T from T(0) = 0, symmetrized after every step."""
    t_grid = np.asarray(t_grid, float)
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise RiccatiError("t_grid must start at 0 and increase")
    d = coeffs.dim
    out = np.zeros((len(t_grid), d, d))
    T = np.zeros((d, d))
    f = coeffs.riccati_rhs
    for k, (t0, h, m) in enumerate(_substeps(t_grid, max_step)):
        t = t0
        for _ in range(m):
            k1 = f(t, T)
            k2 = f(t + h / 2, T + h / 2 * k1)
            k3 = f(t + h / 2, T + h / 2 * k2)
            k4 = f(t + h, T + h * k3)
            T = _sym(T + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
            t += h
            if not np.all(np.isfinite(T)) or np.abs(T).max() > 1e150:
                valid = np.zeros(len(t_grid), bool)
                valid[: k + 1] = True
                partial = MatrixTrajectory(t_grid, out, valid, "T", coeffs.variant, coeffs.inv.a)
                raise RiccatiBlowUp(t, partial)
        out[k + 1] = T
    return MatrixTrajectory(t_grid, out, np.ones(len(t_grid), bool), "T", coeffs.variant, coeffs.inv.a)


def riccati_residual(coeffs: RiccatiCoefficients, traj_T: MatrixTrajectory) -> np.ndarray:
    """Relative residual |Ṫ_fd − rhs|/(1 + ‖T‖²) at interior points of a uniform grid."""
    from .geodesics import central_derivative

    dt = traj_T.times[1] - traj_T.times[0]
    dT = central_derivative(traj_T.matrices, dt, order=6)
    res = []
    for k in range(3, len(traj_T.times) - 3):
        T = traj_T.matrices[k]
        rhs = coeffs.riccati_rhs(traj_T.times[k], T)
        res.append(np.abs(dT[k] - rhs).max() / (1 + np.linalg.norm(T) ** 2))
    return np.array(res)


def propagate_linear(coeffs: RiccatiCoefficients, tau_grid, max_step: float = 1e-3):
    """(Y, Z) of the linear form at reversed times `tau_grid` (increasing, starting anywhere ≥ 0)."""
    tau_grid = np.asarray(tau_grid, float)
    if np.any(np.diff(tau_grid) < 0) or tau_grid[0] < 0:
        raise RiccatiError("tau_grid must be nonnegative and nondecreasing")
    d = coeffs.dim
    X = np.vstack([np.zeros((d, d)), np.eye(d)])
    Ys = np.empty((len(tau_grid), d, d))
    Zs = np.empty((len(tau_grid), d, d))
    grid = np.concatenate([[0.0], tau_grid])
    if coeffs.profile.is_constant:
        G = coeffs.linear_generator(0.0)
        cache = {}
        for k, (t0, t1) in enumerate(zip(grid[:-1], grid[1:])):
            step = round(t1 - t0, 14)
            if step not in cache:
                cache[step] = expm(G * (t1 - t0))
            X = cache[step] @ X
            Ys[k], Zs[k] = X[:d], X[d:]
        return Ys, Zs
    g = coeffs.linear_generator
    for k, (t0, h, m) in enumerate(_substeps(grid, max_step)):
        t = t0
        for _ in range(m):
            k1 = g(t) @ X
            k2 = g(t + h / 2) @ (X + h / 2 * k1)
            k3 = g(t + h / 2) @ (X + h / 2 * k2)
            k4 = g(t + h) @ (X + h * k3)
            X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        Ys[k], Zs[k] = X[:d], X[d:]
    return Ys, Zs


def solve_S(coeffs: RiccatiCoefficients, s_grid, max_step: float = 1e-3) -> MatrixTrajectory:
    """S at forward times `s_grid` (in [0, 1)) through the linear form; ill-conditioned samples flagged."""
    s_grid = np.asarray(s_grid, float)
    if np.any(s_grid >= 1) or np.any(s_grid < 0):
        raise RiccatiError("forward times must lie in [0, 1)")
    order = np.argsort(1 - s_grid, kind="stable")
    Ys, Zs = propagate_linear(coeffs, (1 - s_grid)[order], max_step)
    d = coeffs.dim
    S = np.full((len(s_grid), d, d), np.nan)
    valid = np.zeros(len(s_grid), bool)
    for idx, Y, Z in zip(order, Ys, Zs):
        if np.linalg.cond(Y) < COND_LIMIT:
            S[idx] = _sym(-np.linalg.solve(Y.T, Z.T).T)
            valid[idx] = True
    traj = MatrixTrajectory(s_grid, S, valid, "S", coeffs.variant, coeffs.inv.a)
    if not valid.all():
        traj.notes.append(f"near-conjugate samples at s = {s_grid[~valid].tolist()}")
    return traj


def recover_S(traj_T: MatrixTrajectory) -> MatrixTrajectory:
    """S(1 − t) = −T(t)^{-1}, reported at forward times s = 1 − t in increasing order."""
    times = 1.0 - traj_T.times[::-1]
    d = traj_T.matrices.shape[1]
    S = np.full((len(times), d, d), np.nan)
    valid = np.zeros(len(times), bool)
    for k, (T, ok) in enumerate(zip(traj_T.matrices[::-1], traj_T.valid[::-1])):
        if not ok or not np.all(np.isfinite(T)):
            continue
        if np.linalg.cond(T) < COND_LIMIT:
            S[k] = _sym(-np.linalg.inv(T))
            valid[k] = True
    out = MatrixTrajectory(times, S, valid, "S", traj_T.variant, traj_T.a)
    if not valid.all():
        out.notes.append(f"near-conjugate or singular samples at s = {times[~valid].tolist()}")
    return out


@dataclass(frozen=True)
class AsymptoticSeed:
    T1: np.ndarray
    T2: np.ndarray
    T3: np.ndarray

    def T(self, t):
        return t * self.T1 + t**2 * self.T2 + t**3 * self.T3


def asymptotic_seed(coeffs: RiccatiCoefficients) -> AsymptoticSeed:
    """Taylor coefficients of T at τ = 0 read off from the Riccati equation."""
    U = coeffs.U
    T1 = coeffs.D.copy()
    T2 = 0.5 * (T1 @ U + U.T @ T1)
    T3 = (T2 @ U + U.T @ T2 + T1 @ coeffs.potential(0.0) @ T1) / 3
    return AsymptoticSeed(T1, T2, T3)


def horizontal_laplacian(S: np.ndarray, variant: Epsilon = SUB) -> float:
    """Σ_{i≥1} S_ii, plus S_00/ε² for the ε variant."""
    S = np.asarray(S)
    diag = np.diagonal(S, axis1=-2, axis2=-1)
    tail = diag[..., 1:].sum(axis=-1)
    if is_sub(variant):
        return tail
    return tail + diag[..., 0] / float(variant) ** 2


def volume_distortion(S_traj: MatrixTrajectory, variant: Epsilon | None = None,
                      tol: float = 1e-8) -> Callable[[float], float]:
    """t ↦ exp ∫_0^t Δ_H f_s ds by composite Simpson on the trajectory grid.

    The grid must be uniform, start at 0 and be fully valid.  A Simpson estimate on
    every other point checks the quadrature; disagreement above `tol` (after the
    Richardson factor 1/15) raises QuadratureError.
    """
    variant = S_traj.variant if variant is None else variant
    s = S_traj.times
    if s[0] != 0.0:
        raise QuadratureError("S trajectory must start at s = 0")
    steps = np.diff(s)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise QuadratureError("volume_distortion needs a uniform grid")
    if not S_traj.valid.all():
        raise QuadratureError("trajectory has near-conjugate samples")
    if len(s) < 5 or len(s) % 2 == 0:
        raise QuadratureError("need an odd number (≥ 5) of samples")
    lap = horizontal_laplacian(S_traj.matrices, variant)
    fine = cumulative_simpson(lap, x=s, initial=0.0)
    coarse = cumulative_simpson(lap[::2], x=s[::2], initial=0.0)
    gap = np.abs(fine[::2] - coarse).max() / 15
    if gap > tol:
        raise QuadratureError(f"grid too coarse: Richardson estimate {gap:.2e} exceeds {tol:.1e}")
    spline = CubicSpline(s, fine)
    s_max = s[-1]

    def det(t):
        t = np.asarray(t, float)
        if np.any(t < 0) or np.any(t > s_max + 1e-12):
            raise QuadratureError(f"t outside the sampled range [0, {s_max}]")
        return np.exp(spline(t))

    return det


def determinant_ratio(coeffs: RiccatiCoefficients, t_values) -> np.ndarray:
    """det(dφ_t) = det Y(1 − t) / det Y(1) from the linear form."""
    t_values = np.atleast_1d(np.asarray(t_values, float))
    taus = np.unique(np.concatenate([1 - t_values, [1.0]]))
    Ys, _ = propagate_linear(coeffs, taus)
    sign, logdet = np.linalg.slogdet(Ys)
    log_at = dict(zip(np.round(taus, 14), logdet))
    sign_at = dict(zip(np.round(taus, 14), sign))
    ref = log_at[1.0]
    out = np.empty(len(t_values))
    for k, t in enumerate(t_values):
        key = round(1 - t, 14)
        out[k] = sign_at[key] * sign_at[1.0] * np.exp(log_at[key] - ref) if t > 0 else 1.0
    return out


def batch_determinant_ratio(a, b, n: int, variant: Epsilon, profile: CurvatureProfile | None,
                            t_values) -> np.ndarray:
    """Vectorized determinant_ratio for arrays of invariants; constant profiles only.

    Returns shape (len(a), len(t_values)).
    """
    profile = profile or CurvatureProfile.flat(n)
    if not profile.is_constant:
        raise RiccatiError("batched route needs a time-independent profile")
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    U, E, D = coefficient_arrays(a, b, n, variant)
    M = E.copy()
    if profile.kind == "isotropic":
        idx = np.arange(2, 2 * n + 1)
        M[:, idx, idx] += (profile.k**2 * a**2)[:, None]
    G = np.concatenate([
        np.concatenate([np.swapaxes(U, -1, -2), D], axis=-1),
        np.concatenate([-M, -U], axis=-1),
    ], axis=-2)
    d = 2 * n + 1
    t_values = np.asarray(t_values, float)
    taus = np.unique(np.concatenate([1 - t_values, [1.0]]))
    X = np.concatenate([np.zeros((len(a), d, d)), np.broadcast_to(np.eye(d), (len(a), d, d))], axis=1)
    logdets = {}
    signs = {}
    prev = 0.0
    cache = {}
    for tau in taus:
        step = round(tau - prev, 14)
        if step > 0:
            if step not in cache:
                cache[step] = expm(G * (tau - prev))
            X = cache[step] @ X
        signs[round(tau, 14)], logdets[round(tau, 14)] = np.linalg.slogdet(X[:, :d])
        prev = tau
    out = np.empty((len(a), len(t_values)))
    for k, t in enumerate(t_values):
        key = round(1 - t, 14)
        if t == 0:
            out[:, k] = 1.0
        else:
            out[:, k] = signs[key] * signs[1.0] * np.exp(logdets[key] - logdets[1.0])
    return out


def reeb_pole_constant(coeffs: RiccatiCoefficients, window=(0.01, 0.1), degree: int = 6) -> float:
    """Coefficient of 1/t in S(1 − t)[0, 0], fitted from the solved trajectory.

    The expansion fixes the t⁻³ and t⁻² terms but leaves this one free, so it is
    measured: a polynomial fit of t³·S₀₀ over `window` and its t² coefficient.
    """
    t = np.linspace(*window, 60)
    S = solve_S(coeffs, 1 - t)
    if not S.valid.all():
        raise RiccatiError("fit window crosses a near-conjugate sample")
    return float(np.polynomial.polynomial.polyfit(t, t**3 * S.entry(0, 0), degree)[2])


def first_conjugate_tau(coeffs: RiccatiCoefficients, samples: int = 2001) -> float | None:
    """First reversed time in (0, 1] where Y loses rank, or None.

    The core 3×3 block is scanned for a sign change of its determinant.  The tail comes
    in J-pairs whose determinant never changes sign, so it is first de-rotated by
    exp(−Uᵀτ); for constant diagonal tail curvature that leaves a scalar multiple of the
    identity, whose trace is scanned instead.  Profiles that couple core and tail fall
    back to the full determinant.
    """
    tau = np.linspace(0.0, 1.0, samples)[1:]
    Ys, _ = propagate_linear(coeffs, tau)
    d = coeffs.dim
    coupled = d > 3 and (np.abs(coeffs.U[:3, 3:]).max() > 0 or np.abs(coeffs.potential(0.0)[:3, 3:]).max() > 0
                         or not coeffs.profile.is_constant)
    if coupled:
        signals = [np.linalg.det(Ys)]
    else:
        signals = [np.linalg.det(Ys[:, :3, :3])]
        if d > 3:
            Ut = coeffs.U[3:, 3:]
            derot = np.array([expm(-Ut.T * t) @ Y[3:, 3:] for t, Y in zip(tau, Ys)])
            signals.append(np.trace(derot, axis1=1, axis2=2))
    first = None
    for sig in signals:
        flips = np.nonzero(np.sign(sig[1:]) != np.sign(sig[:-1]))[0]
        if len(flips):
            t = float(tau[flips[0] + 1])
            first = t if first is None else min(first, t)
    return first


def s22_lower_bound_check(S_traj: MatrixTrajectory, variant: Epsilon | None = None,
                          tol: float = 1e-8, raise_on_fail: bool = True) -> dict:
    """Check S_11(s) ≥ −1/(1 − s) (0-based gradient-direction entry) at all valid samples."""
    s = S_traj.times[S_traj.valid]
    vals = S_traj.matrices[S_traj.valid, 1, 1]
    slack = vals + 1.0 / (1.0 - s)
    k = int(np.argmin(slack))
    report = {"min_slack": float(slack[k]), "t_worst": float(s[k]), "value": float(vals[k]),
              "pass": bool(slack[k] >= -tol), "samples": int(len(s))}
    if raise_on_fail and not report["pass"]:
        raise BoundViolation(f"S22 bound violated at s = {s[k]:.6g}: value {vals[k]:.6g}, slack {slack[k]:.3e}")
    return report
