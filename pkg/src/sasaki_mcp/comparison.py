"""Closed-form 2×2 comparison solutions and the dominance checks built on them.

Three families live here:

* ``S0_sub``: the rational solution used for the sub-Riemannian bound, singular at t = 1.
* ``Sr_eps``: the arctan/log family for the Riemannian extensions, written in τ = aεt.
* ``Sr_trig``: the trigonometric family for positive Tanaka-Webster curvature, whose
  (1,1) entry blows up at the first zero of m(t) = (θ cos θ − sin θ)², θ = rat/2.

Every family carries the right-hand side of the linear matrix ODE it solves, so
``ode_residual`` can check it by finite differences.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import mpmath as mp
import numpy as np
from scipy.optimize import brentq

from .models import SUB, Epsilon, is_sub
from .riccati import MatrixTrajectory

SQRT3 = math.sqrt(3.0)
MP_DPS = 30
EPS_SERIES_TAU = 0.5
TRIG_MP_THETA = 0.02

C0 = np.diag([0.0, 1.0])
C5 = np.diag([1.0, 0.0])


class ComparisonError(ValueError):
    pass


class ComparisonBlowUp(ArithmeticError):
    def __init__(self, time: float):
        super().__init__(f"comparison solution blows up at t = {time:.12g}")
        self.time = time


def C3_matrix(a: float) -> np.ndarray:
    return np.array([[0.0, a / 2], [a / 2, 0.0]])


def C4_matrix(a: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [a, 0.0]])


def default_C2(n: int, c: float) -> float:
    """Integration constant that removes the 1/t² pole of the arctan/log family."""
    return -144.0 + 1296.0 * (n - 1) * (11 + 8 * c + (10 + 6 * c) * math.log(12.0)) / (c * (1 - c))


@dataclass(frozen=True)
class ComparisonParams:
    a: float
    n: int = 1
    c: float = 0.5
    epsilon: Epsilon = SUB
    r: float | None = None
    b: float = 0.0
    C1: float = 0.0
    C2: float | None = None
    C3: float = 0.0
    kappa: float | None = None

    def __post_init__(self):
        if not 0 < self.c < 1:
            raise ComparisonError(f"c must lie in (0, 1), got {self.c}")
        if not self.a > 0:
            raise ComparisonError(f"a must be positive, got {self.a}")
        if self.n < 1:
            raise ComparisonError("n must be at least 1")
        if self.r is not None and not self.r > 0:
            raise ComparisonError("r must be positive")

    @property
    def C2_value(self) -> float:
        return default_C2(self.n, self.c) if self.C2 is None else self.C2

    @property
    def kappa_value(self) -> float:
        """Forcing of the trigonometric system; r²a² unless overridden."""
        if self.kappa is not None:
            return self.kappa
        if self.r is None:
            raise ComparisonError("kappa needs r")
        return (self.r * self.a) ** 2

    @property
    def alpha(self) -> float:
        return (2 * self.n - 2 + self.c) / self.c

    @property
    def beta(self) -> float:
        return (2 * self.n - 1 - self.c) / (1 - self.c)


@dataclass
class ComparisonSolution:
    """A 2×2 family S(t) together with the right-hand side of its ODE.

    ``singular_points`` lists times where the family or its coefficients are singular;
    residual checks keep their stencils away from them.
    """

    kind: str
    params: ComparisonParams
    evaluator: Callable[[np.ndarray], np.ndarray]
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    singular_points: tuple = ()
    info: dict = field(default_factory=dict)

    def __call__(self, t) -> np.ndarray:
        return self.evaluator(t)


# ---------------------------------------------------------------- finite differences

def _central_weights(deriv: int, half: int) -> np.ndarray:
    offsets = np.arange(-half, half + 1, dtype=float)
    A = np.vander(offsets, increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[deriv] = math.factorial(deriv)
    return np.linalg.solve(A, rhs)


_STENCILS = {1: (3, _central_weights(1, 3)), 2: (3, _central_weights(2, 3)), 3: (4, _central_weights(3, 4))}


def stencil_derivative(f: Callable, t, h, deriv: int = 1):
    """Sixth-order central difference of a vectorized f at points t with per-point steps h."""
    half, w = _STENCILS[deriv]
    t = np.asarray(t, float)
    h = np.broadcast_to(np.asarray(h, float), t.shape)
    out = 0.0
    for k, wk in zip(range(-half, half + 1), w):
        if wk != 0.0:
            val = np.asarray(f(t + k * h))
            out = out + wk * val
    return out / h.reshape(h.shape + (1,) * (np.ndim(out) - h.ndim)) ** deriv


def _distance_to(t, points, lo=None, hi=None):
    d = np.full(np.shape(t), np.inf)
    for p in points:
        d = np.minimum(d, np.abs(np.asarray(t) - p))
    return d


def ode_residual(sol: ComparisonSolution, t, step_fraction: float = 0.005) -> np.ndarray:
    """Relative residual ‖S' − rhs(t, S)‖ / scale at each t.

    The step is a fraction of the distance to the nearest singular point, capped at
    1e-3, and the scale is max(‖rhs‖, ‖S‖/distance) so entries that cancel in the
    right-hand side are still judged against their natural size.
    """
    t = np.atleast_1d(np.asarray(t, float))
    dist = _distance_to(t, sol.singular_points)
    h = np.minimum(step_fraction * dist, 1e-3)
    S = sol.evaluator(t)
    dS = stencil_derivative(sol.evaluator, t, h, 1)
    rhs = sol.rhs(t, S)
    err = np.abs(dS - rhs).max(axis=(-2, -1))
    scale = np.maximum(np.abs(rhs).max(axis=(-2, -1)), np.abs(S).max(axis=(-2, -1)) / np.minimum(dist, 1.0))
    return err / scale


def _sym2(s11, s12, s22) -> np.ndarray:
    s11, s12, s22 = np.broadcast_arrays(s11, s12, s22)
    out = np.empty(s11.shape + (2, 2))
    out[..., 0, 0] = s11
    out[..., 0, 1] = out[..., 1, 0] = s12
    out[..., 1, 1] = s22
    return out


# ---------------------------------------------------------------- S0, sub-Riemannian

def s0_matrix(a: float, n: int, c: float, t) -> np.ndarray:
    s = 1.0 - np.asarray(t, float)
    p = (1 - c) * c
    s11 = 12 * (26 - 26 * n + 5 * c - 6 * n * c + c**2) / (p * a**2 * s**3)
    s12 = -6 * (14 - 14 * n + c - 2 * n * c + c**2) / (p * a * s**2)
    s22 = -4 * ((c + 6) * (n - 1) + c * (n - c)) / (p * s)
    return _sym2(s11, s12, s22)


def sub_K(a: float, t) -> np.ndarray:
    s = 1.0 - np.asarray(t, float)
    return _sym2(12 / (a**2 * s**3), -6 / (a * s**2), 4 / s)


def s0_solution(params: ComparisonParams) -> ComparisonSolution:
    if not is_sub(params.epsilon):
        raise ComparisonError("S0 belongs to the sub-Riemannian branch")
    a, n, c = params.a, params.n, params.c
    C4 = C4_matrix(a)

    def rhs(t, S):
        t = np.asarray(t, float)
        K = sub_K(a, t)
        s = (1 - t)[..., None, None]
        return (S @ (C0 @ K + C4.T) + (K @ C0 + C4) @ S + K @ C0 @ K
                + 32 * (n - 1) / ((1 - c) * s**2) * C0 + 72 * (n - 1) / (c * a**2 * s**4) * C5)

    return ComparisonSolution("S0_sub", params, lambda t: s0_matrix(a, n, c, t), rhs, (1.0,))


# ---------------------------------------------------------------- Sr, ε branch

def _sr_eps_core(tau, c, n, A0, A1, A2, atan, log, r3=SQRT3):
    """(F, V, W) with Sr = aε·(F, V, W)(aεt); polynomial coefficients derived symbolically."""
    q = 12 + tau**2
    AT = atan(tau / (2 * r3))
    L = log(q)
    m = n - 1
    p = c * (1 - c)
    t2, t3, t4, t5 = tau**2, tau**3, tau**4, tau**5
    f_num = (p * (A0 + A1 * tau + A2 * t2)
             + AT * (216 * r3 * (4 * c + 9) * m * t2 - 2592 * r3 * (8 * c + 11) * m)
             - L * 2592 * (3 * c + 5) * m * tau
             + 12 * (c**2 - 6 * c * n + 5 * c - 26 * n + 26) * t3)
    v_num = (-p * (6 * A0 * tau + A1 * (12 - 5 * t2) + A2 * (24 * tau - 4 * t3))
             + AT * (864 * r3 * (4 * c + 9) * m * t3 - 72576 * r3 * (2 * c + 3) * m * tau)
             + L * (31104 - 12960 * t2) * (3 * c + 5) * m
             + 72 * (c**2 - 2 * c * n + c - 14 * n + 14) * t4
             + 144 * (c**2 + 96 * c * n - 97 * c + 171 * n - 171) * t2
             + 1728 * (c**2 + 72 * c * n - 73 * c + 99 * n - 99))
    w_num = (-p * (9 * A0 * t2 + A1 * (6 * t3 - 36 * tau) + A2 * (4 * t4 - 48 * t2 + 144))
             + AT * r3 * m * (-864 * (4 * c + 9) * t4 + 2592 * (88 * c + 135) * t2 - 31104 * (4 * c + 9))
             + L * (15552 * t3 - 93312 * tau) * (3 * c + 5) * m
             - 144 * (c**2 - 2 * c * n + c - 6 * n + 6) * t5
             - 432 * (3 * c**2 + 68 * c * n - 71 * c + 126 * n - 126) * t3
             - 10368 * (c**2 + 29 * c * n - 30 * c + 36 * n - 36) * tau)
    den = p * t2 * q**2
    return f_num / den, -v_num / (12 * den), -w_num / (36 * den)


def _eps_constants(params: ComparisonParams):
    ae = params.a * float(params.epsilon)
    return ae, ae * params.C3, params.C2_value, params.C1 / ae


def closed_form_sr_eps(params: ComparisonParams, t, precise: bool = False) -> np.ndarray:
    """Sr(t) for the ε branch, shape (..., 2, 2); t > 0.

    Below τ = aεt = EPS_SERIES_TAU (or everywhere when ``precise``) the expression is
    evaluated in extended precision, because its terms cancel to leave the 1/t poles.
    """
    if is_sub(params.epsilon):
        raise ComparisonError("closed_form_sr_eps needs a positive epsilon")
    t = np.asarray(t, float)
    if np.any(t <= 0):
        raise ComparisonError("closed_form_sr_eps is singular at t = 0")
    ae, A0, A1, A2 = _eps_constants(params)
    c, n = params.c, params.n
    tau = ae * t
    F, V, W = _sr_eps_core(tau, c, n, A0, A1, A2, np.arctan, np.log)
    F, V, W = np.array(F, float), np.array(V, float), np.array(W, float)
    low = np.ones(tau.shape, bool) if precise else tau < EPS_SERIES_TAU
    if np.any(low):
        with mp.workdps(MP_DPS):
            mc, mn = mp.mpf(c), mp.mpf(n)
            for idx in zip(*np.nonzero(np.atleast_1d(low))):
                ti = mp.mpf(float(np.atleast_1d(tau)[idx]))
                f, v, w = _sr_eps_core(ti, mc, mn, mp.mpf(A0), mp.mpf(A1), mp.mpf(A2), mp.atan, mp.log,
                                         mp.sqrt(3))
                key = idx if tau.ndim else ()
                F[key], V[key], W[key] = float(f), float(v), float(w)
    return ae * _sym2(F, V, W)


def eps_K_hat(params: ComparisonParams, t) -> np.ndarray:
    """K̂ evaluated at reversed time: entries of (C0 + C5/ε) K^ε(1 − t) (C0 + C5/ε)."""
    ae = params.a * float(params.epsilon)
    t = np.asarray(t, float)
    tau = ae * t
    q = 12 + tau**2
    return _sym2(12 / (t * q), -6 * ae / q, 4 * (tau**2 + 3) / (t * q))


def sr_eps_solution(params: ComparisonParams, precise: bool = False) -> ComparisonSolution:
    if is_sub(params.epsilon):
        raise ComparisonError("Sr_eps needs a positive epsilon")
    eps = float(params.epsilon)
    n, c = params.n, params.c
    C4e = eps * C4_matrix(params.a)

    def rhs(t, S):
        Kh = eps_K_hat(params, t)
        A = Kh + C4e
        k12 = Kh[..., 0, 1][..., None, None]
        k22 = Kh[..., 1, 1][..., None, None]
        g = (A @ S + S @ np.swapaxes(A, -1, -2) + Kh @ Kh
             + (2 * n - 2) * k22**2 / (1 - c) * C0 + (2 * n - 2) * k12**2 / c * C5)
        return -g

    return ComparisonSolution("Sr_eps", params, lambda t: closed_form_sr_eps(params, t, precise), rhs, (0.0,))


def printed_sr_eps(params: ComparisonParams, t) -> np.ndarray:
    """The arctan/log family with the coefficients exactly as they were first published.

    Kept for diagnosis only: it disagrees with ``closed_form_sr_eps`` (and fails its ODE)
    except in the (1,1) and (1,2) entries at n = 1.
    """
    a, e, n, c = params.a, float(params.epsilon), params.n, params.c
    C1, C2, C3 = params.C1, params.C2_value, params.C3
    t = np.asarray(t, float)
    ae = a * e
    tau = ae * t
    q = 12 + tau**2
    AT = np.arctan(tau * SQRT3 / 6)
    L = np.log(q)
    p = c * (1 - c)
    s11 = (C1 / q**2 + C2 / (t * q**2) + C3 / (t**2 * q**2)
           - 12 / (ae * p * t**2 * q**2) * (
               tau**3 * (26 * n - 26 + 6 * c * n - 5 * c - c**2)
               + 18 * SQRT3 * (n - 1) * ((9 + 4 * c) * tau**2 - 96 * c - 132) * AT
               - 216 * tau * (n - 1) * (5 + 3 * c) * L))
    s12 = (1 / (12 * ae * c * t**2 * (1 - c) * q**2)) * (
        -864 * SQRT3 * ae * (n - 1) * t * (4 * tau**2 * c + 9 * tau**2 - 168 * c - 252) * AT
        + 2592 * (3 * c + 5) * (n - 1) * (-12 + 5 * tau**2) * L
        - 144 * (n - 1) * ((7 + c) * tau**4 - (576 + 276 * c) * tau**2 - 216 - 432 * c)
        + p * (72 * tau**4 - 4 * C1 * t**3 * a**2 * e**2 + (144 - 5 * C2) * tau**2
               + (24 * C1 - 6 * C3 * a**2 * e**2) * t + 1728 + 12 * C2))
    s22 = -(1 / (36 * a**2 * e**2 * t**2 * p * q**2)) * (
        -864 * SQRT3 * ae * (n - 1) * (324 + 144 * c - 405 * tau**2 - 264 * c * tau**2
                                       + 9 * tau**4 + 4 * c * tau**4) * AT
        + 15552 * (n - 1) * (5 + 3 * c) * a**2 * e**2 * t * (-6 + tau**2) * L
        + 288 * a**2 * e**2 * (n - 1) * t * (3 * tau**4 + c * tau**4 - 102 * c * tau**2 - 1296 - 1044 * c)
        - p * (144 * C1 + 4 * C1 * tau**4 - 48 * C1 * tau**2 - 36 * C2 * a**2 * e**2 * t
               - 1296 * t**3 * a**4 * e**4 + 6 * C2 * a**4 * e**4 * t**3 - 10368 * t * a**2 * e**2
               + 9 * C3 * a**4 * e**4 * t**2 - 144 * t**5 * a**6 * e**6)
        - 54432 * n * t**3 * a**4 * e**4)
    return _sym2(s11, s12, s22)


def sr_eps_expansion(params: ComparisonParams, t) -> np.ndarray:
    """Three-term small-t expansion of the ε-branch family."""
    ae = params.a * float(params.epsilon)
    n, c = params.n, params.c
    t = np.asarray(t, float)
    s11 = -1 / t - ae**2 * (2 * n - 2 + c**2 - c) / (12 * c * (1 - c)) * t
    s12 = -ae * (n - 2 + c) / (2 * (1 - c)) + 0 * t
    s22 = -(2 * n - 1 - c) / ((1 - c) * t) + ae**2 * (2 * n - 5 + 3 * c) / (12 * (1 - c)) * t
    return _sym2(s11, s12, s22)


def sr11_third_order_residual(params: ComparisonParams, t) -> np.ndarray:
    """Relative residual of the scalar third-order equation satisfied by Sr₁₁.

    The first-derivative coefficient uses (aε)⁴t⁴; derivatives are taken numerically in
    extended precision on the closed form.
    """
    if is_sub(params.epsilon):
        raise ComparisonError("the third-order equation belongs to the ε branch")
    t = np.atleast_1d(np.asarray(t, float))
    out = np.empty(len(t))
    with mp.workdps(MP_DPS):
        ae = mp.mpf(params.a) * mp.mpf(float(params.epsilon))
        n, c = params.n, mp.mpf(params.c)
        A0 = ae * params.C3
        A1 = mp.mpf(params.C2_value)
        A2 = mp.mpf(params.C1) / ae

        def f(x):
            return ae * _sr_eps_core(ae * x, c, n, A0, A1, A2, mp.atan, mp.log, mp.sqrt(3))[0]

        for k, tk in enumerate(t):
            x = mp.mpf(float(tk))
            g, d1, d2, d3 = mp.diffs(f, x, 3)
            tau2 = (ae * x) ** 2
            q = 12 + tau2
            c2 = 18 * (tau2 + 4) / (x * q)
            c1 = 18 * (5 * tau2**2 + 48 * tau2 + 48) / (x**2 * q**2)
            c0 = 24 * ae**2 * (5 * tau2 + 24) / (x * q**2)
            src = (72 * ae**2 / (x**2 * q**2)
                   + 144 * ae**2 * (n - 1) * (13 * tau2**2 + 3 * tau2**2 * c + 144 + 132 * tau2 - 36 * tau2 * c)
                   / (x**2 * c * (1 - c) * q**4))
            terms = [d3, c2 * d2, c1 * d1, c0 * g, src]
            out[k] = float(abs(mp.fsum(terms)) / max(abs(v) for v in terms))
    return out


# ---------------------------------------------------------------- symmetric powers

@dataclass(frozen=True)
class SymmetricPowerBasis:
    a: float
    epsilon: float

    @property
    def ae2(self) -> float:
        return (self.a * self.epsilon) ** 2

    def f1(self, t):
        t = _as_num(t)
        return 1 / (t * (12 + self.ae2 * t**2))

    def f2(self, t):
        t = _as_num(t)
        return 1 / (12 + self.ae2 * t**2)

    def products(self) -> list[Callable]:
        """{f₁², f₁f₂, f₂²}, a basis of the second symmetric power."""
        return [lambda t: self.f1(t) ** 2, lambda t: self.f1(t) * self.f2(t), lambda t: self.f2(t) ** 2]

    def second_order_coefficients(self, t):
        t = _as_num(t)
        q = 12 + self.ae2 * t**2
        return 6 * (self.ae2 * t**2 + 4) / (t * q), 6 * self.ae2 / q

    def third_order_coefficients(self, t):
        t = _as_num(t)
        x = self.ae2 * t**2
        q = 12 + x
        return (18 * (x + 4) / (t * q), 18 * (5 * x**2 + 48 * x + 48) / (t**2 * q**2),
                24 * self.ae2 * (5 * x + 24) / (t * q**2))

    def wronskian(self, t):
        t = np.asarray(t, float)
        q = 12 + self.ae2 * t**2
        # f1 = f2/t, so W = f1 f2' − f1' f2 = f2²/t².
        return 1 / (t * q) ** 2

    def residual_second(self, f: Callable, t) -> np.ndarray:
        """Relative residual of f'' + p f' + q f, derivatives taken numerically in extended precision."""
        return _linear_ode_residual(f, t, lambda x: (1,) + self.second_order_coefficients(x))

    def residual_third(self, g: Callable, t) -> np.ndarray:
        return _linear_ode_residual(g, t, lambda x: (1,) + self.third_order_coefficients(x))


def _as_num(t):
    return t if isinstance(t, mp.mpf) else np.asarray(t, float)


def _linear_ode_residual(f: Callable, t, coefficients: Callable) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, float))
    out = np.empty(len(t))
    with mp.workdps(MP_DPS):
        for k, tk in enumerate(t):
            x = mp.mpf(float(tk))
            coef = coefficients(x)
            order = len(coef) - 1
            derivs = list(mp.diffs(f, x, order))
            terms = [c * derivs[order - j] for j, c in enumerate(coef)]
            out[k] = float(abs(mp.fsum(terms)) / max(abs(v) for v in terms))
    return out


def symmetric_power_basis(a: float, epsilon: float) -> SymmetricPowerBasis:
    if not (a > 0 and epsilon > 0):
        raise ComparisonError("a and epsilon must be positive")
    return SymmetricPowerBasis(float(a), float(epsilon))


# ---------------------------------------------------------------- trigonometric family

def _g_small(th):
    """sin θ − θ cos θ by its series; accurate to rounding for |θ| < 0.1."""
    th2 = th * th
    return th * th2 / 3.0 * (1 - th2 / 10 * (1 - th2 / 28 * (1 - th2 / 54 * (1 - th2 / 88 * (1 - th2 / 130)))))


def _trig_g(th, lib):
    if lib is mp:
        if abs(th) >= 0.1 or th == 0:
            return mp.sin(th) - th * mp.cos(th)
        # the difference cancels about three times the leading bits of θ, so buy them back
        extra = 3 * max(0, -mp.mag(th)) + 16
        with mp.workprec(mp.mp.prec + extra):
            val = mp.sin(th) - th * mp.cos(th)
        return +val
    th = np.asarray(th, float)
    return np.where(np.abs(th) < 0.1, _g_small(th), np.sin(th) - th * np.cos(th))


class _TrigKernel:
    """Coefficient functions of the trigonometric system in θ = ωt, ω = ra/2."""

    def __init__(self, params: ComparisonParams, lib):
        self.lib = lib
        num = (lambda x: mp.mpf(x)) if lib is mp else float
        self.r, self.a = num(params.r), num(params.a)
        self.omega = self.r * self.a / 2
        self.alpha, self.beta = num(params.alpha), num(params.beta)
        self.kappa = num(params.kappa_value)

    def trig(self, th):
        L = self.lib
        return L.sin(th), L.cos(th), _trig_g(th, L)

    def k12(self, th):
        s, _, g = self.trig(th)
        return -self.r**2 * self.a * s / (2 * g)

    def k12_prime(self, th):
        """d k12 / dθ."""
        s, co, g = self.trig(th)
        return -self.r**2 * self.a * (co * g - s * th * s) / (2 * g * g)

    def k22(self, th):
        s, co, g = self.trig(th)
        return self.omega * (co / s + th * s / g)

    def bm(self, th, trig=None):
        """b(t)·m(t), the quadrature kernel; `trig` may carry precomputed (sin, cos, g)."""
        s, co, g = trig if trig is not None else self.trig(th)
        al, be, om = self.alpha, self.beta, self.omega
        A = co / s
        gp = th * s
        gpp = s + th * co
        B = gp / g
        Ap = -(1 + A * A)
        Bp = gpp / g - B * B
        br = ((al / 2) * (Ap - Bp) + (al / 2 - 1) * (Ap + Bp) + 2 * al * s / g
              + al * (A + B) * (A - B) + (al - 2 + be) * (A + B) ** 2 - self.kappa / om**2)
        # b = −2 k12² ω² br and k12² m = r⁴a² sin²θ / 4
        return -(self.r**4 * self.a**2 / 2) * s * s * om**2 * br

    def psi(self, th):
        """[cos², −2 sin cos, sin²]/m and its first two θ-derivatives."""
        L = self.lib
        s2, c2 = L.sin(2 * th), L.cos(2 * th)
        _, _, g = self.trig(th)
        s = L.sin(th)
        gp = th * s
        gpp = s + th * L.cos(th)
        m = g * g
        mp1 = 2 * g * gp
        mp2 = 2 * (gp * gp + g * gpp)
        N = [(1 + c2) / 2, -s2, (1 - c2) / 2]
        N1 = [-s2, -2 * c2, s2]
        N2 = [-2 * c2, 4 * s2, 2 * c2]
        psi0 = [x / m for x in N]
        psi1 = [x1 / m - x * mp1 / m**2 for x, x1 in zip(N, N1)]
        psi2 = [x2 / m - 2 * x1 * mp1 / m**2 - x * mp2 / m**2 + 2 * x * mp1**2 / m**3
                for x, x1, x2 in zip(N, N1, N2)]
        return psi0, psi1, psi2

    def weights(self, th):
        L = self.lib
        s, co = L.sin(th), L.cos(th)
        return [s * s, s * co, co * co]


_GL16 = np.polynomial.legendre.leggauss(16)
_X0_HINT = 4.493409457909064


def _panel_edges(thetas: np.ndarray, width: float = 0.1) -> np.ndarray:
    """Breakpoints covering [0, max θ]: every θ, a uniform mesh, and geometric grading toward x₀."""
    top = float(thetas.max())
    edges = [np.linspace(0.0, top, max(2, int(np.ceil(top / width)) + 1)), thetas]
    gap = _X0_HINT - top
    if 0 < gap < 1.0:
        # panels shrink so each stays within half its distance to the singular angle
        x, marks = top, []
        while x > 0 and _X0_HINT - x < 1.0:
            marks.append(x)
            x = _X0_HINT - (_X0_HINT - x) * 1.5
        edges.append(np.array(marks))
    return np.unique(np.concatenate(edges))


def _trig_integrals_float(ker: _TrigKernel, thetas: np.ndarray) -> np.ndarray:
    """∫_0^θ bm(φ)·[sin², sin cos, cos²](φ) dφ/ω for each θ, by composite 16-point Gauss-Legendre."""
    edges = _panel_edges(np.asarray(thetas, float))
    lo, hi = edges[:-1], edges[1:]
    x, w = _GL16
    phi = 0.5 * (hi - lo)[:, None] * (x + 1) + lo[:, None]
    f = ker.bm(phi)[..., None] * np.stack(ker.weights(phi), axis=-1)
    panels = 0.5 * (hi - lo)[:, None] * np.einsum("k,pkj->pj", w, f)
    cum = np.vstack([np.zeros(3), np.cumsum(panels, axis=0)])
    return cum[np.searchsorted(edges, thetas)] / ker.omega


_GL_CACHE: dict = {}


def _gauss_legendre_mp(degree: int = 3):
    """Gauss-Legendre nodes on [−1, 1] at the working precision (3·2^(degree−1) points)."""
    key = (degree, mp.mp.prec)
    if key not in _GL_CACHE:
        _GL_CACHE[key] = mp.calculus.quadrature.GaussLegendre(mp.mp).calc_nodes(degree, mp.mp.prec)
    return _GL_CACHE[key]


def _trig_integrals_mp(ker: _TrigKernel, th) -> list:
    # the integrand is analytic on [0, θ] with its nearest singularity near π, so a
    # fixed 12-point rule reaches working precision on these short intervals
    half = th / 2
    acc = [mp.mpf(0)] * 3
    for x, wt in _gauss_legendre_mp():
        phi = half * (x + 1)
        trig = ker.trig(phi)
        sn, co = trig[0], trig[1]
        f = ker.bm(phi, trig) * wt
        acc = [s + f * wj for s, wj in zip(acc, (sn * sn, sn * co, co * co))]
    return [s * half / ker.omega for s in acc]


def _trig_entries(ker: _TrigKernel, th, I):
    """(Sr11, Sr12, Sr22) from the particular solution at angle θ with integrals I."""
    om = ker.omega
    scale = 2 / (ker.r**2 * ker.a**2)
    psi0, psi1, psi2 = ker.psi(th)
    dot = lambda u, v: u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
    u = scale * dot(psi0, I)
    du = scale * om * dot(psi1, I)
    d2u = scale * om**2 * dot(psi2, I)
    k12 = ker.k12(th)
    dk12 = om * ker.k12_prime(th)
    k22 = ker.k22(th)
    al = ker.alpha
    v = -(du + al * k12**2) / (2 * k12)
    dv = -(d2u + 2 * al * k12 * dk12) / (2 * k12) + (du + al * k12**2) * dk12 / (2 * k12**2)
    w = -(dv + ker.a * u + k22 * v + k12 * k22) / k12
    return u, v, w


def first_root_x0() -> float:
    """First positive root of x cos x − sin x."""
    return brentq(lambda x: x * math.cos(x) - math.sin(x), math.pi, 1.5 * math.pi, xtol=1e-15)


def diameter_bound(r: float) -> float:
    if not r > 0:
        raise ComparisonError("r must be positive")
    return 2 * first_root_x0() / r


def trig_blowup_time(r: float, a: float) -> float | None:
    """First t in (0, 1] with m(t) = 0, found by a sign scan of sin θ − θ cos θ; None if absent."""
    omega = r * a / 2
    grid = np.linspace(0.0, 1.0, 2001)[1:]
    g = np.sin(omega * grid) - omega * grid * np.cos(omega * grid)
    sign_change = np.nonzero(np.sign(g[1:]) != np.sign(g[:-1]))[0]
    if len(sign_change):
        k = sign_change[0]
        return brentq(lambda t: math.sin(omega * t) - omega * t * math.cos(omega * t), grid[k], grid[k + 1],
                      xtol=1e-15)
    if g[-1] == 0.0:
        return 1.0
    return None


def bonnet_myers_solution(params: ComparisonParams) -> ComparisonSolution:
    """Trigonometric Sr(t) by variation of parameters for the (1,1) entry, elimination for the rest.

    Sr₁₂ and Sr₂₂ inherit a pole where sin θ = 0 (K has one there); Sr₁₁ is continued
    up to the blow-up time t₀ of m, where it diverges.
    """
    if params.r is None:
        raise ComparisonError("the trigonometric family needs r")
    if params.C1 or params.C3 or (params.C2 not in (None, 0.0)):
        raise ComparisonError("only the particular solution (all homogeneous constants zero) is supported")
    fker = _TrigKernel(params, np)
    mker = _TrigKernel(params, mp)
    omega = fker.omega
    t0 = trig_blowup_time(params.r, params.a)
    sing = [0.0]
    if t0 is not None:
        sing.append(t0)
    k = 1
    while k * math.pi / omega < 1.5:
        sing.append(k * math.pi / omega)
        k += 1

    def evaluator(t):
        t = np.asarray(t, float)
        flat = np.atleast_1d(t).ravel()
        if np.any(flat <= 0):
            raise ComparisonError("the trigonometric family is singular at t = 0")
        if t0 is not None and np.any(flat >= t0):
            raise ComparisonBlowUp(t0)
        th = omega * flat
        out = np.empty((len(flat), 3))
        small = th < TRIG_MP_THETA
        if np.any(small):
            with mp.workdps(MP_DPS):
                for i in np.nonzero(small)[0]:
                    tm = mp.mpf(float(th[i]))
                    out[i] = [float(x) for x in _trig_entries(mker, tm, _trig_integrals_mp(mker, tm))]
        big = ~small
        if np.any(big):
            I = _trig_integrals_float(fker, th[big])
            u, v, w = _trig_entries(fker, th[big], list(I.T))
            out[big] = np.stack([u, v, w], axis=1)
        return _sym2(out[:, 0], out[:, 1], out[:, 2]).reshape(t.shape + (2, 2))

    def rhs(t, S):
        t = np.asarray(t, float)
        th = omega * t
        k12 = fker.k12(th)
        k22 = fker.k22(th)
        D1 = np.zeros(t.shape + (2, 2))
        D1[..., 0, 1] = params.a
        D1[..., 1, 0] = k12
        D1[..., 1, 1] = k22
        D2 = _sym2(params.alpha * k12**2, k12 * k22, params.beta * k22**2)
        return -S @ D1 - np.swapaxes(D1, -1, -2) @ S - D2 + params.kappa_value * C0

    info = {"blowup_time": t0, "omega": omega}
    return ComparisonSolution("Sr_trig", params, evaluator, rhs, tuple(sing), info)


def trig_small_t_limits(params: ComparisonParams) -> dict:
    """Limits of t³Sr₁₁, t²Sr₁₂ and t·Sr₂₂ as t → 0."""
    al, be, a = params.alpha, params.beta, params.a
    return {
        "t3_S11": (-192 * be - 156 * al + 336) / a**2,
        "t2_S12": 6 * (8 * be + 7 * al - 14) / a,
        "t_S22": -4 * (4 * be + 3 * al - 6),
    }


def blowup_report(params: ComparisonParams, approach: tuple = (1e-2, 1e-3, 1e-4)) -> dict:
    """Whether Sr₁₁ blows up before t = 1, and its sign and growth on the approach to t₀."""
    t0 = trig_blowup_time(params.r, params.a)
    report = {"a": params.a, "r": params.r, "ar": params.a * params.r, "blowup_time": t0,
              "blows_up": t0 is not None and t0 < 1.0}
    if t0 is None:
        return report
    sol = bonnet_myers_solution(params)
    ts = np.array([t0 * (1 - d) for d in approach])
    s11 = sol(ts)[:, 0, 0]
    report.update({"approach_times": ts.tolist(), "S11": s11.tolist(),
                   "sign": int(np.sign(s11[-1])), "growing": bool(np.all(np.diff(np.abs(s11)) > 0))})
    return report


# ---------------------------------------------------------------- exponent and dominance

def mcp_exponent_for(n: int, c: float) -> float:
    """(1−t) times minus the horizontal-trace lower bound, for a split parameter c."""
    return 1.0 + 4.0 * ((c + 6) * (n - 1) + c * (n - c)) / ((1 - c) * c)


def mcp_exponent(params: ComparisonParams, c_grid=None, t_grid=None) -> dict:
    """Smallest integer N with Δ_H f_t ≥ −N/(1 − t) from the S₀ comparison, optimized over c.

    The bound is −1/(1−t) from the gradient-direction entry plus S₀[1,1] for the J-direction
    and tail; its supremum over t of (1−t)·(−bound) is read off a grid.
    """
    if not is_sub(params.epsilon):
        raise ComparisonError("the exponent is computed on the sub-Riemannian branch")
    c_grid = np.linspace(0.05, 0.95, 181) if c_grid is None else np.asarray(c_grid, float)
    t_grid = np.linspace(0.0, 0.99, 100) if t_grid is None else np.asarray(t_grid, float)
    best = None
    values = []
    for c in c_grid:
        S0 = s0_matrix(params.a, params.n, c, t_grid)
        bound = -1.0 / (1.0 - t_grid) + S0[:, 1, 1]
        sup = float(np.max(-(1.0 - t_grid) * bound))
        N = int(math.ceil(sup - 1e-9))
        values.append((float(c), sup, N))
        if best is None or sup < best[1]:
            best = (float(c), sup, N)
    return {"N": best[2], "c": best[0], "sup": best[1], "grid": values}


def sbar_from_trajectory(S_traj: MatrixTrajectory, a: float) -> np.ndarray:
    """S̄ = [[S00, S02], [S02, S22]] + C3 + s3·C0 on each sample (frame order Reeb, ∇f, J∇f, tail)."""
    M = S_traj.matrices
    tail = np.diagonal(M, axis1=-2, axis2=-1)[..., 3:].sum(axis=-1)
    Sb = _sym2(M[:, 0, 0], M[:, 0, 2], M[:, 2, 2]) + C3_matrix(a)
    Sb[:, 1, 1] += tail
    return Sb


def _psd_report(times, lhs, rhs, tol, csv_path=None, json_path=None, relative=False) -> dict:
    diff = lhs - rhs
    slack = np.linalg.eigvalsh(diff)[:, 0]
    if relative:
        slack = slack / np.maximum(1.0, np.maximum(np.abs(lhs).max(axis=(1, 2)), np.abs(rhs).max(axis=(1, 2))))
    lmin = np.linalg.eigvalsh(lhs)[:, 0]
    rmax = np.linalg.eigvalsh(rhs)[:, -1]
    k = int(np.argmin(slack))
    report = {"pass": bool(slack[k] >= -tol), "min_slack": float(slack[k]), "t_worst": float(times[k]),
              "samples": int(len(times))}
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "lhs_eig_min", "rhs_eig_max", "slack"])
            for row in zip(times, lmin, rmax, slack):
                w.writerow([repr(float(x)) for x in row])
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({k2: report[k2] for k2 in ("pass", "min_slack", "t_worst")}, fh, indent=2)
    return report


def royden_compare(S_traj: MatrixTrajectory, comp: ComparisonSolution, params: ComparisonParams,
                   tol: float = 1e-6, csv_path=None, json_path=None) -> dict:
    """Check S̄(t) ⪰ S₀(t) at the valid samples of a sub-Riemannian trajectory."""
    if comp.kind != "S0_sub":
        raise ComparisonError("royden_compare expects the S0 family")
    ok = S_traj.valid
    times = S_traj.times[ok]
    Sb = sbar_from_trajectory(S_traj, params.a)[ok]
    return _psd_report(times, Sb, comp(times), tol, csv_path, json_path)


def eps_dominance(S_traj: MatrixTrajectory, comp: ComparisonSolution, params: ComparisonParams,
                  tol: float = 1e-6, csv_path=None, json_path=None) -> dict:
    """Check Ŝ(s) ⪰ Sr(1 − s), Ŝ = P S̄ P with P = diag(1/ε, 1), at valid samples with s < 1."""
    if comp.kind != "Sr_eps":
        raise ComparisonError("eps_dominance expects the Sr_eps family")
    eps = float(params.epsilon)
    ok = S_traj.valid & (S_traj.times < 1)
    s = S_traj.times[ok]
    P = np.diag([1 / eps, 1.0])
    Sh = P @ sbar_from_trajectory(S_traj, params.a)[ok] @ P
    return _psd_report(s, Sh, comp(1 - s), tol, csv_path, json_path)


def trig_dominance(S_traj: MatrixTrajectory, comp: ComparisonSolution, params: ComparisonParams,
                   tol: float = 1e-9, csv_path=None, json_path=None) -> dict:
    """Check S̄(s) ⪰ Sr(1 − s) for the trigonometric family, skipping its singular times.

    Slack is relative to the entry size because both sides grow like (1 − s)⁻³.  Only
    meaningful when the geodesic has no conjugate point (see ``first_conjugate_tau``).
    """
    if comp.kind != "Sr_trig":
        raise ComparisonError("trig_dominance expects the Sr_trig family")
    t = 1 - S_traj.times
    ok = S_traj.valid & (t > 0)
    for p in comp.singular_points:
        ok &= np.abs(t - p) > 1e-3
    if comp.info["blowup_time"] is not None:
        ok &= t < comp.info["blowup_time"]
    s = S_traj.times[ok]
    Sb = sbar_from_trajectory(S_traj, params.a)[ok]
    return _psd_report(s, Sb, comp(1 - s), tol, csv_path, json_path, relative=True)


def with_params(params: ComparisonParams, **changes) -> ComparisonParams:
    return replace(params, **changes)
