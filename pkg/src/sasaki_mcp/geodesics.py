"""Normal geodesics on H^{2n+1}: Hamiltonian flow, closed-form exponential, shooting and moving frames.

Momenta are canonical covector components (p_x, p_y, p_z) dual to the
coordinate basis.  Frame components h = (h_X, h_Y, h_V) are obtained by
pairing with the left-invariant frame at the current point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .models import SUB, Epsilon, SasakianModel, connection, is_sub


class GeodesicError(ValueError):
    pass


class BlowUpError(GeodesicError):
    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state at step {step} (t = {time:.6g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class GeodesicState:
    position: np.ndarray
    momentum: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "momentum", np.asarray(self.momentum, dtype=float))
        if self.position.shape != self.momentum.shape:
            raise GeodesicError("position and momentum shapes differ")


@dataclass(frozen=True)
class GeodesicInvariants:
    """a = horizontal momentum norm, b = vertical frame component of the momentum."""

    a: float
    b: float


@dataclass(frozen=True)
class FrameMatrixW:
    W: np.ndarray
    variant: Epsilon


@dataclass
class Trajectory:
    model: SasakianModel
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray

    @property
    def hamiltonian(self) -> np.ndarray:
        return hamiltonian_value(self.model, self.positions, self.momenta)

    def state(self, k: int) -> GeodesicState:
        return GeodesicState(self.positions[k], self.momenta[k], float(self.times[k]))

    def frame_momenta(self) -> np.ndarray:
        return frame_momenta(self.model.n, self.positions, self.momenta)

    def to_csv(self, path) -> None:
        n = self.model.n
        if self.positions.ndim != 2:
            raise GeodesicError("CSV export handles a single trajectory")
        header = (
            ["t"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"y{i + 1}" for i in range(n)]
            + ["z"]
            + [f"px{i + 1}" for i in range(n)]
            + [f"py{i + 1}" for i in range(n)]
            + ["pz", "H"]
        )
        H = self.hamiltonian
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                w.writerow([repr(float(v)) for v in (t, *self.positions[k], *self.momenta[k], H[k])])


def _vertical_weight(epsilon: Epsilon) -> float:
    return 0.0 if is_sub(epsilon) else 1.0 / float(epsilon) ** 2


def frame_momenta(n: int, position, momentum) -> np.ndarray:
    """(h_X, h_Y, h_V) from canonical momenta; broadcasts over leading axes."""
    q = np.asarray(position, float)
    p = np.asarray(momentum, float)
    x, y = q[..., :n], q[..., n : 2 * n]
    pz = p[..., 2 * n : 2 * n + 1]
    h = p.copy()
    h[..., :n] = p[..., :n] - y * pz / 2
    h[..., n : 2 * n] = p[..., n : 2 * n] + x * pz / 2
    return h


def canonical_momenta(n: int, position, frame_components) -> np.ndarray:
    """Inverse of frame_momenta."""
    q = np.asarray(position, float)
    h = np.asarray(frame_components, float)
    x, y = q[..., :n], q[..., n : 2 * n]
    pz = h[..., 2 * n : 2 * n + 1]
    p = h.copy()
    p[..., :n] = h[..., :n] + y * pz / 2
    p[..., n : 2 * n] = h[..., n : 2 * n] - x * pz / 2
    return p


def hamiltonian_value(model: SasakianModel, position, momentum) -> np.ndarray:
    n = model.n
    h = frame_momenta(n, position, momentum)
    horizontal = 0.5 * np.sum(h[..., : 2 * n] ** 2, axis=-1)
    return horizontal + 0.5 * _vertical_weight(model.epsilon) * h[..., 2 * n] ** 2


def hamiltonian(model: SasakianModel, state: GeodesicState) -> float:
    if not np.all(np.isfinite(state.momentum)):
        raise GeodesicError("covector must be finite")
    return float(hamiltonian_value(model, state.position, state.momentum))


def hamilton_rhs(model: SasakianModel, position, momentum):
    n = model.n
    q = np.asarray(position, float)
    p = np.asarray(momentum, float)
    h = frame_momenta(n, q, p)
    hx, hy = h[..., :n], h[..., n : 2 * n]
    pz = p[..., 2 * n]
    x, y = q[..., :n], q[..., n : 2 * n]
    dq = np.empty_like(q)
    dq[..., :n] = hx
    dq[..., n : 2 * n] = hy
    dq[..., 2 * n] = np.sum(-y / 2 * hx + x / 2 * hy, axis=-1) + _vertical_weight(model.epsilon) * pz
    dp = np.zeros_like(p)
    dp[..., :n] = -hy * pz[..., None] / 2
    dp[..., n : 2 * n] = hx * pz[..., None] / 2
    return dq, dp


def integrate(model: SasakianModel, start: GeodesicState, t_end: float = 1.0, steps: int = 1000) -> Trajectory:
    """Classical fourth-order Runge–Kutta on Hamilton's equations; start may hold a batch of states."""
    if steps < 1:
        raise GeodesicError("steps must be at least 1")
    q = start.position.copy()
    p = start.momentum.copy()
    h = (t_end - start.time) / steps
    times = start.time + h * np.arange(steps + 1)
    Q = np.empty((steps + 1,) + q.shape)
    P = np.empty((steps + 1,) + p.shape)
    Q[0], P[0] = q, p
    for k in range(steps):
        k1q, k1p = hamilton_rhs(model, q, p)
        k2q, k2p = hamilton_rhs(model, q + h / 2 * k1q, p + h / 2 * k1p)
        k3q, k3p = hamilton_rhs(model, q + h / 2 * k2q, p + h / 2 * k2p)
        k4q, k4p = hamilton_rhs(model, q + h * k3q, p + h * k3p)
        q = q + h / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        p = p + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise BlowUpError(k + 1, float(times[k + 1]))
        Q[k + 1], P[k + 1] = q, p
    return Trajectory(model, times, Q, P)


_SERIES_THRESHOLD = 0.5


def theta_minus_sin(phi) -> np.ndarray:
    """φ − sin φ without cancellation near 0."""
    shape = np.shape(phi)
    phi = np.atleast_1d(np.asarray(phi, float))
    out = phi - np.sin(phi)
    small = np.abs(phi) < _SERIES_THRESHOLD
    if np.any(small):
        ps = phi[small]
        term = ps**3 / 6
        acc = term.copy()
        for k in range(2, 10):
            term = -term * ps**2 / ((2 * k) * (2 * k + 1))
            acc = acc + term
        out[small] = acc
    return out.reshape(shape)


def _chord_factor(phi) -> np.ndarray:
    """(e^{iφ} − 1)/(iφ), exact at φ = 0."""
    phi = np.asarray(phi, float)
    return np.sinc(phi / np.pi) + 1j * (phi / 2) * np.sinc(phi / (2 * np.pi)) ** 2


def _area_factor(phi) -> np.ndarray:
    """(φ − sin φ)/φ², exact at φ = 0."""
    phi = np.asarray(phi, float)
    safe = np.where(phi == 0, 1.0, phi)
    return np.where(phi == 0, 0.0, theta_minus_sin(phi) / safe**2)


def heisenberg_exponential(n: int, covector, t=1.0, epsilon: Epsilon = SUB, start=None) -> np.ndarray:
    """Closed-form normal geodesic at time t from `start` (default origin) with canonical covector.

    Broadcasts over leading axes of `covector`/`start` and over `t`.
    """
    covector = np.asarray(covector, float)
    d = 2 * n + 1
    if start is None:
        start = np.zeros(covector.shape[-1:])
    start = np.asarray(start, float)
    t = np.asarray(t, float)
    h = frame_momenta(n, start, covector)
    h, start, t = np.broadcast_arrays(h, start, t[..., None])
    t = t[..., 0]
    w = h[..., :n] + 1j * h[..., n : 2 * n]
    theta = h[..., 2 * n]
    phi = theta * t
    u = w * (t * _chord_factor(phi))[..., None]
    speed2 = np.sum(np.abs(w) ** 2, axis=-1)
    z = 0.5 * speed2 * t**2 * _area_factor(phi) + _vertical_weight(epsilon) * theta * t
    local = np.empty(u.shape[:-1] + (d,))
    local[..., :n] = u.real
    local[..., n : 2 * n] = u.imag
    local[..., 2 * n] = z
    return _group_mul(n, start, local)


def _group_mul(n, p, q):
    out = p + q
    out[..., 2 * n] += 0.5 * (
        np.sum(p[..., :n] * q[..., n : 2 * n], axis=-1) - np.sum(p[..., n : 2 * n] * q[..., :n], axis=-1)
    )
    return out


def _mu(theta):
    """(θ − sin θ)/(8 sin²(θ/2)) and its derivative, smooth through 0."""
    theta = np.asarray(theta, float)
    s2 = np.sin(theta / 2) ** 2
    tiny = np.abs(theta) < 1e-8
    s2_safe = np.where(tiny, 1.0, s2)
    mu = np.where(tiny, theta / 12, theta_minus_sin(theta) / (8 * s2_safe))
    dmu = np.where(tiny, 1.0 / 12, 0.25 - theta_minus_sin(theta) * np.sin(theta) / (16 * s2_safe**2))
    return mu, dmu


@dataclass
class ShootingResult:
    covector: np.ndarray
    theta: np.ndarray
    valid: np.ndarray


def connecting_covector(n: int, start, target, epsilon: Epsilon = SUB, margin: float = 1e-6,
                        max_iter: int = 200) -> ShootingResult:
    """Covector at `start` whose geodesic reaches `target` at t = 1, on the branch |θ| < 2π.

    Solves |u|²μ(θ) + θ/ε² = z (ε = ∞ for the sub-Riemannian case) by safeguarded Newton.
    Entries whose solution sits within `margin` of ±2π, or whose target lies on the vertical
    axis through `start` in the sub-Riemannian case, are marked invalid.
    """
    start = np.asarray(start, float)
    target = np.asarray(target, float)
    start, target = np.broadcast_arrays(start, target)
    rel = _group_mul(n, -start, target)
    u = rel[..., :n] + 1j * rel[..., n : 2 * n]
    z = rel[..., 2 * n]
    r2 = np.sum(np.abs(u) ** 2, axis=-1)
    kappa = _vertical_weight(epsilon)
    scale = np.maximum(r2, 1e-300)
    lim = 2 * np.pi * (1 - 1e-15)
    lo = np.full(z.shape, -lim)
    hi = np.full(z.shape, lim)
    theta = np.clip(12 * z / scale, -6.0, 6.0) if kappa == 0 else np.clip(z / (r2 / 12 + kappa), -6.0, 6.0)
    for _ in range(max_iter):
        mu, dmu = _mu(theta)
        F = r2 * mu + kappa * theta - z
        dF = r2 * dmu + kappa
        lo = np.where(F < 0, theta, lo)
        hi = np.where(F > 0, theta, hi)
        step = F / np.where(dF > 0, dF, 1.0)
        cand = theta - step
        bad = ~((cand > lo) & (cand < hi)) | ~np.isfinite(cand)
        new = np.where(bad, 0.5 * (lo + hi), cand)
        done = (np.abs(new - theta) <= 4e-16 * np.maximum(1.0, np.abs(theta))) | (F == 0)
        theta = new
        if np.all(done):
            break
    factor = _chord_factor(theta)
    w = u / factor[..., None]
    h = np.empty(rel.shape)
    h[..., :n] = w.real
    h[..., n : 2 * n] = w.imag
    h[..., 2 * n] = theta
    valid = np.abs(theta) < 2 * np.pi - margin
    if kappa == 0:
        valid &= r2 > 1e-24 * np.maximum(1.0, np.abs(z))
    return ShootingResult(canonical_momenta(n, start, h), theta, valid)


def invariants(model: SasakianModel, start: GeodesicState) -> GeodesicInvariants:
    h = frame_momenta(model.n, start.position, start.momentum)
    return GeodesicInvariants(float(np.linalg.norm(h[: 2 * model.n])), float(h[2 * model.n]))


def invariant_drift(traj: Trajectory) -> dict:
    n = traj.model.n
    h = traj.frame_momenta()
    a = np.linalg.norm(h[..., : 2 * n], axis=-1)
    b = h[..., 2 * n]
    H = traj.hamiltonian
    return {
        "a": float(np.abs(a - a[0]).max()),
        "b": float(np.abs(b - b[0]).max()),
        "H": float(np.abs(H - H[0]).max()),
    }


def frame_matrix(inv: GeodesicInvariants, n: int, variant: Epsilon = SUB) -> FrameMatrixW:
    """Skew matrix of the moving frame (Reeb, gradient direction, J-gradient direction, rest)."""
    if inv.a <= 0:
        raise GeodesicError("vertical-only geodesic: the moving frame needs a > 0")
    d = 2 * n + 1
    W = np.zeros((d, d))
    a, b = inv.a, inv.b
    W[0, 2], W[2, 0] = -a / 2, a / 2
    if is_sub(variant):
        W[1, 2], W[2, 1] = b, -b
    else:
        rate = (1 / (2 * float(variant) ** 2) - 1) * b
        W[1, 2], W[2, 1] = -rate, rate
    return FrameMatrixW(W, variant)


def central_derivative(values: np.ndarray, dt: float, order: int = 6) -> np.ndarray:
    """Central difference along axis 0 on a uniform grid; edges (order/2 points) are NaN."""
    weights = {
        2: [-1 / 2, 0, 1 / 2],
        4: [1 / 12, -2 / 3, 0, 2 / 3, -1 / 12],
        6: [-1 / 60, 3 / 20, -3 / 4, 0, 3 / 4, -3 / 20, 1 / 60],
        8: [1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280],
    }[order]
    half = order // 2
    values = np.asarray(values, float)
    out = np.full(values.shape, np.nan)
    m = values.shape[0]
    acc = np.zeros((m - 2 * half,) + values.shape[1:])
    for k, wk in enumerate(weights):
        if wk:
            acc = acc + wk * values[k : m - 2 * half + k]
    out[half : m - half] = acc / dt
    return out


def velocity_residual(traj: Trajectory) -> float:
    """Max gap between the finite-difference velocity and the raised momentum (horizontal part for SUB)."""
    dt = traj.times[1] - traj.times[0]
    fd = central_derivative(traj.positions, dt, order=8)
    exact, _ = hamilton_rhs(traj.model, traj.positions, traj.momenta)
    gap = np.abs(fd - exact)[4:-4]
    return float(gap.max())


def _frame_velocity(model: SasakianModel, positions, momenta) -> np.ndarray:
    """Frame components of the velocity: horizontal momenta plus h_V/ε² on V."""
    h = frame_momenta(model.n, positions, momenta)
    c = h.copy()
    c[..., -1] = _vertical_weight(model.epsilon) * h[..., -1]
    return c


def acceleration_residual(traj: Trajectory) -> float:
    """Max |Dφ̇/dt − b·J φ̇| along a sub-Riemannian trajectory (Levi-Civita of the ε = 1 extension).

    For an ε model the expected acceleration is zero (Riemannian geodesic of ⟨·,·⟩^ε).
    """
    model = traj.model
    table = connection(model if not model.is_sub else SasakianModel(model.n, 1.0))
    J = model.complex_structure()
    dt = traj.times[1] - traj.times[0]
    c = _frame_velocity(model, traj.positions, traj.momenta)
    dc = central_derivative(c, dt, order=8)
    cov = dc + np.einsum("...i,...j,ijk->...k", c, c, table.coefficients)
    if model.is_sub:
        b = frame_momenta(model.n, traj.positions, traj.momenta)[..., -1]
        expected = b[..., None] * np.einsum("ij,...j->...i", J, c)
    else:
        expected = np.zeros_like(cov)
    return float(np.abs(cov - expected)[4:-4].max())


def moving_frame(model: SasakianModel, positions, momenta) -> np.ndarray:
    """Frame components of v_0 = V, v_1 = ∇_H f/a, v_2 = J v_1 along a trajectory.

    The frame is orthonormal for the ε = 1 extension in both variants.
    """
    n = model.n
    h = frame_momenta(n, positions, momenta)
    a = np.linalg.norm(h[..., : 2 * n], axis=-1, keepdims=True)
    v1 = np.zeros_like(h)
    v1[..., : 2 * n] = h[..., : 2 * n] / a
    J = model.complex_structure()
    v2 = np.einsum("ij,...j->...i", J, v1)
    v0 = np.zeros_like(h)
    v0[..., -1] = 1.0
    return np.stack([v0, v1, v2], axis=-2)


def frame_matrix_residual(traj: Trajectory) -> float:
    """Compare ⟨Dv_i/dt, v_j⟩ along the trajectory with frame_matrix on the leading 3×3 block.

    Covariant derivatives and inner products use the ε = 1 extension, as does the frame.
    """
    model = traj.model
    table = connection(SasakianModel(model.n, 1.0))
    g = table.metric
    dt = traj.times[1] - traj.times[0]
    frames = moving_frame(model, traj.positions, traj.momenta)
    c = _frame_velocity(model, traj.positions, traj.momenta)
    dframes = central_derivative(frames, dt, order=8)
    cov = dframes + np.einsum("ti,tfj,ijk->tfk", c, frames, table.coefficients)
    numeric = np.einsum("tfk,kl,tgl->tfg", cov, g, frames)[4:-4]
    inv = invariants(model, traj.state(0))
    W = frame_matrix(inv, model.n, model.epsilon).W[:3, :3]
    return float(np.abs(numeric - W).max())
