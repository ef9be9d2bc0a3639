"""Sasakian structure on the Heisenberg group H^{2n+1} in a left-invariant frame.

Coordinates are ordered (x_1..x_n, y_1..y_n, z) and the frame is ordered
(X_1..X_n, Y_1..Y_n, V).  Everything is left invariant, so connections and
curvatures reduce to constant arrays built from the structure constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

SUB = "sub"

Epsilon = Union[float, str]


class ModelError(ValueError):
    """Invalid model parameters or a failed structural identity."""


def _check_epsilon(epsilon: Epsilon) -> Epsilon:
    if isinstance(epsilon, str):
        if epsilon.lower() != SUB:
            raise ModelError(f"epsilon must be positive or {SUB!r}, got {epsilon!r}")
        return SUB
    eps = float(epsilon)
    if not np.isfinite(eps) or eps <= 0:
        raise ModelError(f"epsilon must be positive, got {epsilon!r}")
    return eps


def is_sub(epsilon: Epsilon) -> bool:
    return isinstance(epsilon, str) and epsilon == SUB


@dataclass(frozen=True)
class SasakianModel:
    n: int
    epsilon: Epsilon = SUB

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ModelError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "epsilon", _check_epsilon(self.epsilon))

    @property
    def dim(self) -> int:
        return 2 * self.n + 1

    @property
    def is_sub(self) -> bool:
        return is_sub(self.epsilon)

    @property
    def vertical_length(self) -> float:
        """|V| in the extended metric; the sub-Riemannian case uses the ε = 1 extension."""
        return 1.0 if self.is_sub else float(self.epsilon)

    def frame(self, point) -> np.ndarray:
        """Columns are X_1..X_n, Y_1..Y_n, V in coordinates at `point`."""
        n = self.n
        point = np.asarray(point, dtype=float)
        x, y = point[:n], point[n : 2 * n]
        F = np.eye(self.dim)
        F[2 * n, :n] = -y / 2
        F[2 * n, n : 2 * n] = x / 2
        return F

    def contact_form(self, point) -> np.ndarray:
        """Coordinate components of η = dz − ½Σ(x dy − y dx)."""
        n = self.n
        point = np.asarray(point, dtype=float)
        x, y = point[:n], point[n : 2 * n]
        return np.concatenate([y / 2, -x / 2, [1.0]])

    def d_contact(self) -> np.ndarray:
        """dη = −Σ dx_i∧dy_i as an antisymmetric coordinate matrix (point independent)."""
        n = self.n
        W = np.zeros((self.dim, self.dim))
        for i in range(n):
            W[i, n + i] = -1.0
            W[n + i, i] = 1.0
        return W

    def d_contact_frame(self) -> np.ndarray:
        """dη on frame fields; dη(X_i, Y_i) = −1 and V lies in its kernel."""
        F0 = self.frame(np.zeros(self.dim))
        return F0.T @ self.d_contact() @ F0

    def complex_structure(self) -> np.ndarray:
        """Matrix of J acting on frame components: J X_i = Y_i, J Y_i = −X_i, J V = 0."""
        n = self.n
        J = np.zeros((self.dim, self.dim))
        for i in range(n):
            J[n + i, i] = 1.0
            J[i, n + i] = -1.0
        return J

    def metric(self) -> np.ndarray:
        """Frame Gram matrix of the extended metric ⟨·,·⟩^ε."""
        g = np.eye(self.dim)
        g[-1, -1] = self.vertical_length**2
        return g

    def structure_constants(self) -> np.ndarray:
        """c[i, j, k] with [e_i, e_j] = Σ_k c[i, j, k] e_k; only [X_i, Y_i] = V."""
        n = self.n
        c = np.zeros((self.dim,) * 3)
        for i in range(n):
            c[i, n + i, 2 * n] = 1.0
            c[n + i, i, 2 * n] = -1.0
        return c

    def bracket(self, u, v) -> np.ndarray:
        """Bracket of two constant-coefficient combinations of frame fields."""
        return np.einsum("i,j,ijk->k", np.asarray(u, float), np.asarray(v, float), self.structure_constants())

    def group_mul(self, p, q) -> np.ndarray:
        n = self.n
        p, q = np.asarray(p, float), np.asarray(q, float)
        out = p + q
        out[..., 2 * n] += 0.5 * (
            np.sum(p[..., :n] * q[..., n : 2 * n], axis=-1) - np.sum(p[..., n : 2 * n] * q[..., :n], axis=-1)
        )
        return out

    def group_inv(self, p) -> np.ndarray:
        return -np.asarray(p, float)

    def to_config(self, profile: "CurvatureProfile | None" = None) -> dict:
        cfg = {"n": self.n, "epsilon": SUB if self.is_sub else float(self.epsilon)}
        if profile is not None:
            cfg["profile"] = profile.to_dict()
        return cfg


def build_heisenberg(n: int, epsilon: Epsilon = SUB) -> SasakianModel:
    model = SasakianModel(n, epsilon)
    structure_residuals(model, raise_on_fail=True)
    return model


@dataclass(frozen=True)
class ConnectionTable:
    """Γ[i, j, k] with ∇_{e_i} e_j = Σ_k Γ[i, j, k] e_k."""

    coefficients: np.ndarray
    metric: np.ndarray
    structure: np.ndarray

    def covariant(self, u, v) -> np.ndarray:
        """∇_u v for constant-coefficient frame combinations u, v."""
        return np.einsum("i,j,ijk->k", np.asarray(u, float), np.asarray(v, float), self.coefficients)

    def operator(self, i: int) -> np.ndarray:
        """Matrix of ∇_{e_i} acting on component vectors."""
        return self.coefficients[i].T

    def curvature(self) -> np.ndarray:
        """R[i, j] = ∇_i∇_j − ∇_j∇_i − ∇_{[e_i, e_j]} as component matrices."""
        d = self.coefficients.shape[0]
        ops = np.array([self.operator(i) for i in range(d)])
        bracket_ops = np.einsum("ijm,mab->ijab", self.structure, ops)
        return np.einsum("iab,jbc->ijac", ops, ops) - np.einsum("jab,ibc->ijac", ops, ops) - bracket_ops

    def riemann(self, u, v, w) -> np.ndarray:
        R = self.curvature()
        return np.einsum("i,j,ijab,b->a", np.asarray(u, float), np.asarray(v, float), R, np.asarray(w, float))

    def koszul_residuals(self) -> dict:
        g = self.metric
        G = self.coefficients
        lowered = np.einsum("ijk,kl->ijl", G, g)
        compat = lowered + np.transpose(lowered, (0, 2, 1))
        torsion = G - np.transpose(G, (1, 0, 2)) - self.structure
        return {"metric": float(np.abs(compat).max()), "torsion": float(np.abs(torsion).max())}


def connection(model: SasakianModel) -> ConnectionTable:
    """Levi-Civita connection of the extended metric from the Koszul formula."""
    c = model.structure_constants()
    g = model.metric()
    cl = np.einsum("ijm,mk->ijk", c, g)
    # 2⟨∇_i e_j, e_k⟩ = ⟨[e_i,e_j],e_k⟩ − ⟨[e_j,e_k],e_i⟩ + ⟨[e_k,e_i],e_j⟩
    lowered = 0.5 * (cl - np.transpose(cl, (2, 0, 1)) + np.transpose(cl, (1, 2, 0)))
    coeffs = np.einsum("ijl,lk->ijk", lowered, np.linalg.inv(g))
    return ConnectionTable(coeffs, g, c)


def tanaka_webster(model: SasakianModel, table: ConnectionTable | None = None) -> ConnectionTable:
    """∇̄_A B = ∇_A B + ⟨V,B⟩/2·JA − ½⟨JA,B⟩V + ⟨V,A⟩/2·JB on frame fields."""
    table = table or connection(model)
    d = model.dim
    g = model.metric()
    J = model.complex_structure()
    V = np.zeros(d)
    V[-1] = 1.0
    E = np.eye(d)
    coeffs = table.coefficients.copy()
    for i in range(d):
        for j in range(d):
            A, B = E[i], E[j]
            coeffs[i, j] += (V @ g @ B) / 2 * (J @ A) - 0.5 * ((J @ A) @ g @ B) * V + (V @ g @ A) / 2 * (J @ B)
    return ConnectionTable(coeffs, g, table.structure)


def structure_residuals(model: SasakianModel, n_points: int = 10, seed: int = 0, raise_on_fail: bool = False,
                        tol: float = 1e-12) -> dict:
    """Reeb conditions, dη = ⟨·, J·⟩ on horizontal pairs, J identities and the Sasakian bracket identity."""
    rng = np.random.default_rng(seed)
    d, n = model.dim, model.n
    dEta = model.d_contact()
    J = model.complex_structure()
    g = model.metric()
    out = {"reeb": 0.0, "contact_metric": 0.0, "j_identities": 0.0, "sasakian_bracket": 0.0, "vertical_length": 0.0}
    horizontal = np.eye(d)[: 2 * n]
    for point in rng.uniform(-2, 2, size=(n_points, d)):
        F = model.frame(point)
        eta = model.contact_form(point)
        Vc = F[:, -1]
        out["reeb"] = max(out["reeb"], abs(eta @ Vc - 1.0), float(np.abs(Vc @ dEta @ F).max()))
        out["reeb"] = max(out["reeb"], float(np.abs(eta @ F[:, : 2 * n]).max()))
        # dη evaluated on coordinate vectors of the frame fields
        coord_form = F.T @ dEta @ F
        frame_form = g @ J
        out["contact_metric"] = max(out["contact_metric"], float(np.abs((coord_form - frame_form)[: 2 * n, : 2 * n]).max()))
        Vlen = np.sqrt(np.eye(d)[-1] @ g @ np.eye(d)[-1])
        out["vertical_length"] = max(out["vertical_length"], abs(Vlen - model.vertical_length))
    out["j_identities"] = max(
        float(np.abs(J[:, -1]).max()),
        float(np.abs(J @ J @ horizontal.T + horizontal.T).max()),
    )
    E = np.eye(d)
    V = E[-1]
    d_frame = model.d_contact_frame()
    for i in range(d):
        for j in range(d):
            A, B = E[i], E[j]
            lhs = (A @ d_frame @ B) * V
            rhs = (
                -J @ J @ model.bracket(A, B)
                + J @ model.bracket(J @ A, B)
                + J @ model.bracket(A, J @ B)
                - model.bracket(J @ A, J @ B)
            )
            out["sasakian_bracket"] = max(out["sasakian_bracket"], float(np.abs(lhs - rhs).max()))
    if raise_on_fail:
        bad = {k: v for k, v in out.items() if v > tol}
        if bad:
            raise ModelError(f"structure identities failed: {bad}")
    return out


def curvature_check(model: SasakianModel, tol: float = 1e-10) -> dict:
    """Levi-Civita identities for ∇V, ∇J and the Rm / Tanaka–Webster curvature relations.

    Returns a mapping of identity name to max residual; raises ModelError if any exceeds `tol`.
    """
    if model.is_sub or abs(float(model.epsilon) - 1.0) > 0:
        raise ModelError("curvature_check needs the ε = 1 model")
    d, n = model.dim, model.n
    table = connection(model)
    tw = tanaka_webster(model, table)
    g = model.metric()
    J = model.complex_structure()
    E = np.eye(d)
    V = E[-1]
    H = E[: 2 * n]
    nab = table.covariant

    def nabla_J(A, B):
        return nab(A, J @ B) - J @ nab(A, B)

    res = {}
    res["nabla_V"] = max(float(np.abs(nab(Y, V) + 0.5 * J @ Y).max()) for Y in E)
    res["nabla_J_horizontal"] = max(
        float(np.abs(nabla_J(A, B) - (A @ g @ B) / 2 * V).max()) for A in H for B in H
    )
    res["nabla_J_vertical"] = max(float(np.abs(nabla_J(A, V) + 0.5 * A).max()) for A in H)
    res["nabla_V_J"] = max(float(np.abs(nabla_J(V, B)).max()) for B in E)

    Rm = table.curvature()
    Rbar = tw.curvature()

    def apply(R, A, B, C):
        return np.einsum("i,j,ijab,b->a", A, B, R, C)

    def hor(Y):
        out = Y.copy()
        out[-1] = 0.0
        return out

    res["rm_reeb"] = max(
        float(np.abs(apply(Rm, A, B, V) - ((B @ g @ V) / 4 * hor(A) - (A @ g @ V) / 4 * hor(B))).max())
        for A in E for B in E
    )
    r2 = 0.0
    for A in H:
        for B in H:
            for C in H:
                rhs = (apply(Rm, A, B, C) + ((J @ B) @ g @ C) / 4 * (J @ A)
                       - ((J @ A) @ g @ C) / 4 * (J @ B) - ((J @ A) @ g @ B) / 2 * (J @ C))
                r2 = max(r2, float(np.abs(apply(Rbar, A, B, C) - rhs).max()))
    res["tw_vs_rm"] = r2
    res["tw_reeb"] = max(float(np.abs(apply(Rbar, A, B, V)).max()) for A in E for B in E)
    res["tw_vertical_slot"] = max(float(np.abs(apply(Rbar, A, V, B)).max()) for A in H for B in H)
    res["tw_flat"] = float(np.abs(Rbar).max())
    koszul = table.koszul_residuals()
    res["koszul_metric"] = koszul["metric"]
    res["koszul_torsion"] = koszul["torsion"]
    worst = max(res.values())
    if worst > tol:
        raise ModelError(f"curvature identities failed (max residual {worst:.3e}): {res}")
    return res


@dataclass(frozen=True)
class CurvatureProfile:
    """Tanaka–Webster curvature along a geodesic in the moving frame.

    kind is "flat", "isotropic" (with rate k) or "custom" (callback t -> matrix).
    """

    n: int
    kind: str = "flat"
    k: float = 0.0
    callback: Callable[[float], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("flat", "isotropic", "custom"):
            raise ModelError(f"unknown profile kind {self.kind!r}")
        if self.kind == "isotropic" and not (np.isfinite(self.k) and self.k >= 0):
            raise ModelError("isotropic rate k must be nonnegative")
        if self.kind == "custom" and self.callback is None:
            raise ModelError("custom profile needs a callback")

    @property
    def is_constant(self) -> bool:
        return self.kind != "custom"

    @classmethod
    def flat(cls, n: int) -> "CurvatureProfile":
        return cls(n, "flat")

    @classmethod
    def isotropic(cls, n: int, k: float) -> "CurvatureProfile":
        return cls(n, "isotropic", float(k))

    @classmethod
    def custom(cls, n: int, callback) -> "CurvatureProfile":
        return cls(n, "custom", callback=callback)

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ModelError("custom profiles cannot be serialized")
        return {"kind": self.kind, "k": self.k} if self.kind == "isotropic" else {"kind": "flat"}

    @classmethod
    def from_dict(cls, n: int, data: dict) -> "CurvatureProfile":
        data = dict(data)
        kind = data.pop("kind", "flat")
        k = float(data.pop("k", 0.0))
        if data:
            raise ModelError(f"unknown profile keys {sorted(data)}")
        if kind == "custom":
            raise ModelError("custom profiles cannot be loaded from JSON")
        return cls(n, kind, k)


def profile_matrix(profile: CurvatureProfile, a: float, t: float) -> np.ndarray:
    d = 2 * profile.n + 1
    if profile.kind == "flat":
        return np.zeros((d, d))
    if profile.kind == "isotropic":
        diag = np.ones(d) * profile.k**2 * a**2
        diag[:2] = 0.0
        return np.diag(diag)
    R = np.asarray(profile.callback(t), dtype=float)
    if R.shape != (d, d):
        raise ModelError(f"custom profile returned shape {R.shape}, expected {(d, d)}")
    if not np.allclose(R, R.T, rtol=0, atol=1e-12 * max(1.0, np.abs(R).max())):
        raise ModelError("custom profile returned an asymmetric matrix")
    if np.abs(R[:2]).max() > 0 or np.abs(R[:, :2]).max() > 0:
        raise ModelError("custom profile must vanish on rows/columns 0 and 1")
    return R


def model_from_config(config: dict) -> tuple[SasakianModel, CurvatureProfile]:
    cfg = dict(config)
    unknown = set(cfg) - {"n", "epsilon", "profile"}
    if unknown:
        raise ModelError(f"unknown model keys {sorted(unknown)}")
    if "n" not in cfg:
        raise ModelError("model config needs 'n'")
    model = SasakianModel(cfg["n"], cfg.get("epsilon", SUB))
    profile = CurvatureProfile.from_dict(model.n, cfg.get("profile", {"kind": "flat"}))
    return model, profile


def load_model(path) -> tuple[SasakianModel, CurvatureProfile]:
    with open(path) as fh:
        return model_from_config(json.load(fh))
