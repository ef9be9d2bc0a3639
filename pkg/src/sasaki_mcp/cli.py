"""Batch driver: one subcommand per verification suite, CSV tables and JSON summaries under --out."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import comparison as cmp
from .geodesics import GeodesicState, heisenberg_exponential, integrate, invariant_drift
from .geodesics import GeodesicInvariants
from .mcp import (ContractionExperiment, heisenberg_contraction_defaults, laplacian_comparison_check, mc_contraction,
                  riccati_determinants)
from .models import SUB, CurvatureProfile, ModelError, build_heisenberg, curvature_check, structure_residuals
from .riccati import (asymptotic_seed, build_coefficients, propagate_T, reeb_pole_constant, s22_lower_bound_check,
                      solve_S)

COMMANDS = ("identities", "geodesic", "riccati", "compare", "closed-form", "mcp", "bonnet-myers")


class ConfigError(ValueError):
    pass


def parse_range(text: str) -> np.ndarray:
    """'a:b:c' → a, a+c, … up to b inclusive (within half a step)."""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"range must look like a:b:c, got {text!r}") from exc
    if step <= 0 or hi < lo:
        raise ConfigError(f"bad range {text!r}")
    count = int(math.floor((hi - lo) / step + 0.5)) + 1
    return np.round(lo + step * np.arange(count), 12)


@dataclass
class RunConfig:
    command: str = "all"
    n: int = 1
    N: float | None = None
    epsilon: float | str = SUB
    t: str = "0.1:0.9:0.1"
    samples: int | None = None
    seed: int = 0
    tol: float | None = None
    r: float = 1.0
    a_scan: str = "8.5:9.5:0.05"
    out: str = "results"

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS + ("all",):
            raise ConfigError(f"unknown command {self.command!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError("n must be a positive integer")
        if self.samples is not None and self.samples < 1:
            raise ConfigError("samples must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.r <= 0:
            raise ConfigError("r must be positive")
        if self.epsilon != SUB and not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
            raise ConfigError("epsilon must be 'sub' or a positive number")
        t = parse_range(self.t)
        if np.any(t < 0) or np.any(t >= 1):
            raise ConfigError("t values must lie in [0, 1)")
        parse_range(self.a_scan)
        return self

    @classmethod
    def from_json(cls, path) -> dict:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return data


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    return obj


# ---------------------------------------------------------------- suites

def suite_identities(cfg: RunConfig):
    tol = cfg.tol or 1e-10
    rows = []
    model = build_heisenberg(cfg.n, 1.0)
    for name, val in structure_residuals(model).items():
        rows.append({"group": "structure", "identity": name, "residual": float(val)})
    try:
        curv = curvature_check(model, tol=np.inf)
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    for name, val in curv.items():
        rows.append({"group": "curvature", "identity": name, "residual": float(val)})
    worst = max(r["residual"] for r in rows)
    return rows, {"pass": worst < tol, "max_residual": worst, "tol": tol}


def suite_geodesic(cfg: RunConfig):
    count = cfg.samples or 100
    n = cfg.n
    model = build_heisenberg(n, cfg.epsilon)
    rng = np.random.default_rng(cfg.seed)
    d = model.dim
    q = rng.uniform(-1, 1, (count, d))
    p = rng.standard_normal((count, d))
    p *= (5 * rng.random(count) ** (1 / d) / np.linalg.norm(p, axis=1))[:, None]
    traj = integrate(model, GeodesicState(q, p), 1.0, 2000)
    exact = heisenberg_exponential(n, p, traj.times[:, None], cfg.epsilon, start=q)
    pos_err = np.abs(exact - traj.positions).max(axis=(0, 2))
    rows = []
    for k in range(count):
        sub = type(traj)(model, traj.times, traj.positions[:, k], traj.momenta[:, k])
        drift = invariant_drift(sub)
        rows.append({"index": k, "position_error": pos_err[k], "H_drift": drift["H"],
                     "a_drift": drift["a"], "b_drift": drift["b"]})
    worst = {key: max(r[key] for r in rows) for key in ("position_error", "H_drift", "a_drift", "b_drift")}
    ok = worst["position_error"] < 1e-8 and worst["H_drift"] < 1e-10 and max(worst["a_drift"], worst["b_drift"]) < 1e-9
    return rows, {"pass": ok, **worst}


def asymptotic_slope(n: int, variant, a=1.3, b=0.7, profile=None) -> float:
    coeffs = build_coefficients(GeodesicInvariants(a, b), n, profile, variant)
    tg = np.geomspace(1e-3, 1e-1, 20)
    T = propagate_T(coeffs, np.concatenate([[0.0], tg]), max_step=1e-4)
    seed = asymptotic_seed(coeffs)
    err = [np.linalg.norm(T.matrices[k + 1] - seed.T(t)) for k, t in enumerate(tg)]
    return float(np.polyfit(np.log(tg), np.log(err), 1)[0])


def _profiles(n):
    return [CurvatureProfile.flat(n), CurvatureProfile.isotropic(n, 0.5), CurvatureProfile.isotropic(n, 1.0)]


def suite_riccati(cfg: RunConfig):
    n = cfg.n
    rows = []
    ok = True
    for variant in (SUB, 0.5, 1.0, 2.0):
        slope = asymptotic_slope(n, variant, profile=CurvatureProfile.isotropic(n, 0.5))
        ok &= slope >= 3.9
        rows.append({"check": "asymptotic_slope", "variant": variant, "a": 1.3, "b": 0.7, "profile": "isotropic:0.5",
                     "value": slope})
        # the free 1/t constant of the Reeb entry is recorded, never checked
        rows.append({"check": "reeb_pole_constant", "variant": variant, "a": 1.3, "b": 0.7, "profile": "isotropic:0.5",
                     "value": reeb_pole_constant(build_coefficients(GeodesicInvariants(1.3, 0.7), n,
                                                                    CurvatureProfile.isotropic(n, 0.5), variant))})
    s = np.linspace(0.0, 0.99, 100)
    for variant in (SUB, 0.5, 1.0, 2.0):
        for prof in _profiles(n):
            for a, b in ((1.0, 0.0), (1.0, 1.5), (2.0, -3.0), (0.5, 5.0)):
                S = solve_S(build_coefficients(GeodesicInvariants(a, b), n, prof, variant), s)
                rep = s22_lower_bound_check(S, variant, tol=cfg.tol or 1e-8, raise_on_fail=False)
                ok &= rep["pass"]
                rows.append({"check": "s22_lower_bound", "variant": variant, "a": a, "b": b,
                             "profile": f"{prof.kind}:{prof.k}", "value": rep["min_slack"]})
    return rows, {"pass": bool(ok)}


def suite_compare(cfg: RunConfig):
    n = cfg.n
    tol = cfg.tol or 1e-6
    s = np.linspace(0.0, 0.99, 100)
    rows = []
    ok = True
    for prof in _profiles(n):
        for a, b in ((1.0, 0.0), (1.0, 1.5), (2.0, -3.0)):
            inv = GeodesicInvariants(a, b)
            S = solve_S(build_coefficients(inv, n, prof, SUB), s)
            for c in (0.2, 0.5, 0.8):
                p = cmp.ComparisonParams(a=a, n=n, c=c)
                rep = cmp.royden_compare(S, cmp.s0_solution(p), p, tol)
                ok &= rep["pass"]
                rows.append({"family": "S0", "profile": f"{prof.kind}:{prof.k}", "a": a, "b": b, "c": c,
                             "epsilon": SUB, "min_slack": rep["min_slack"], "t_worst": rep["t_worst"]})
            for eps in (0.5, 1.0, 2.0):
                Se = solve_S(build_coefficients(inv, n, prof, eps), s)
                p = cmp.ComparisonParams(a=a, n=n, c=0.5, epsilon=eps)
                rep = cmp.eps_dominance(Se, cmp.sr_eps_solution(p), p, tol)
                ok &= rep["pass"]
                rows.append({"family": "Sr_eps", "profile": f"{prof.kind}:{prof.k}", "a": a, "b": b, "c": 0.5,
                             "epsilon": eps, "min_slack": rep["min_slack"], "t_worst": rep["t_worst"]})
    return rows, {"pass": bool(ok), "tol": tol}


CLOSED_FORM_SETS = {
    "S0": [(1.0, 2, 0.5), (2.0, 1, 0.3), (0.7, 3, 0.8)],
    "Sr_eps": [(1.0, 0.5, 2, 0.5), (2.0, 1.0, 1, 0.3), (1.5, 2.0, 3, 0.7)],
    "Sr_trig": [(1.0, 2.0, 1, 0.5), (0.7, 2.0, 2, 0.3), (1.2, 3.0, 3, 0.7)],
}


def closed_form_residuals() -> list[dict]:
    """Max relative ODE residual of every closed-form family on a 200-point grid, three parameter sets each.

    The scalar third-order check on Sr₁₁ is a supplementary diagnostic and uses 50 points.
    """
    rows = []
    t_s0 = np.linspace(0.0, 0.95, 200)
    for a, n, c in CLOSED_FORM_SETS["S0"]:
        sol = cmp.s0_solution(cmp.ComparisonParams(a=a, n=n, c=c))
        rows.append({"family": "S0", "params": f"a={a} n={n} c={c}", "residual": cmp.ode_residual(sol, t_s0).max()})
    t_eps = np.linspace(0.02, 1.0, 200)
    for a, eps, n, c in CLOSED_FORM_SETS["Sr_eps"]:
        p = cmp.ComparisonParams(a=a, n=n, c=c, epsilon=eps)
        sol = cmp.sr_eps_solution(p)
        rows.append({"family": "Sr_eps", "params": f"a={a} eps={eps} n={n} c={c}",
                     "residual": cmp.ode_residual(sol, t_eps).max()})
        rows.append({"family": "Sr11_third_order", "params": f"a={a} eps={eps} n={n} c={c}",
                     "residual": cmp.sr11_third_order_residual(p, np.linspace(0.05, 1.0, 50)).max()})
        basis = cmp.symmetric_power_basis(a, eps)
        rows.append({"family": "second_order_basis", "params": f"a={a} eps={eps}",
                     "residual": max(basis.residual_second(f, t_eps).max() for f in (basis.f1, basis.f2))})
        rows.append({"family": "symmetric_power", "params": f"a={a} eps={eps}",
                     "residual": max(basis.residual_third(g, t_eps).max() for g in basis.products())})
    t_trig = np.linspace(0.01, 0.99, 200)
    for r, a, n, c in CLOSED_FORM_SETS["Sr_trig"]:
        sol = cmp.bonnet_myers_solution(cmp.ComparisonParams(a=a, n=n, c=c, r=r))
        rows.append({"family": "Sr_trig", "params": f"r={r} a={a} n={n} c={c}",
                     "residual": cmp.ode_residual(sol, t_trig).max()})
    return rows


def suite_closed_form(cfg: RunConfig):
    tol = cfg.tol or 1e-7
    rows = closed_form_residuals()
    worst = max(r["residual"] for r in rows)
    return rows, {"pass": worst < tol, "max_residual": worst, "tol": tol}


def suite_mcp(cfg: RunConfig):
    n = cfg.n
    defaults = heisenberg_contraction_defaults(n)
    N = cfg.N if cfg.N is not None else defaults["N"]
    t = parse_range(cfg.t)
    exp = ContractionExperiment(defaults["model"], defaults["center"], defaults["set_spec"], t,
                                cfg.samples or 200_000, cfg.seed)
    report = mc_contraction(exp, N)
    rows = [dict(r, kind="monte_carlo") for r in report["rows"]]
    # pointwise bound on 200 geodesics drawn from the same set
    pts = exp.draw(np.random.default_rng(cfg.seed), 200)
    det, _, valid = riccati_determinants(exp.model, pts, exp.center, t)
    point_slack = (det[valid] - (1 - t) ** N).min(axis=0)
    for tv, sl in zip(t, point_slack):
        rows.append({"t": float(tv), "ratio_estimate": float("nan"), "stderr": float("nan"),
                     "bound": float((1 - tv) ** N), "slack": float(sl), "kind": "pointwise_min"})
    lap_pts = pts[:100]
    lap = laplacian_comparison_check(exp.model, lap_pts, N, exp.center)
    ok = report["pass"] and bool(point_slack.min() >= -1e-6) and lap["pass"]
    return rows, {"pass": ok, "N": N, "mc_min_slack": report["min_slack"], "pointwise_min_slack": point_slack.min(),
                  "laplacian_max": lap["max"], "laplacian_bound": lap["bound"]}


def suite_bonnet_myers(cfg: RunConfig):
    r = cfg.r
    x0 = cmp.first_root_x0()
    threshold = cmp.diameter_bound(r)
    rows = []
    ok = abs(x0 - 4.493409457909064) < 1e-9
    for a in parse_range(cfg.a_scan):
        rep = cmp.blowup_report(cmp.ComparisonParams(a=float(a), n=cfg.n, c=0.5, r=r))
        expected = a * r > 2 * x0
        margin = abs(a * r / (2 * x0) - 1) < 0.005
        if not margin:
            ok &= rep["blows_up"] == expected
        if rep["blows_up"]:
            ok &= rep["growing"]
        rows.append({"a": float(a), "r": r, "ar": float(a * r), "blows_up": rep["blows_up"],
                     "blowup_time": rep["blowup_time"] if rep["blowup_time"] is not None else float("nan"),
                     "sign": rep.get("sign", 0)})
    onset = next((row["a"] for row in rows if row["blows_up"]), None)
    # the divergence is to +inf only for n = 1; the sign is reported, not gated
    signs = sorted({row["sign"] for row in rows if row["blows_up"]})
    return rows, {"pass": bool(ok), "x0": x0, "diameter_bound": threshold, "critical_a": 2 * x0 / r,
                  "onset_a": onset, "blowup_signs": signs}


SUITES = {"identities": suite_identities, "geodesic": suite_geodesic, "riccati": suite_riccati,
          "compare": suite_compare, "closed-form": suite_closed_form, "mcp": suite_mcp,
          "bonnet-myers": suite_bonnet_myers}


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sasaki-mcp", description="Run verification suites for Sasakian comparison.")
    ap.add_argument("command", choices=COMMANDS + ("all",))
    ap.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    ap.add_argument("--out", help="output directory (default: results)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--n", type=int)
    ap.add_argument("--N", type=float)
    ap.add_argument("--epsilon", help="'sub' or a positive number")
    ap.add_argument("--t", help="time grid a:b:c")
    ap.add_argument("--samples", type=int)
    ap.add_argument("--r", type=float)
    ap.add_argument("--a-scan", dest="a_scan", help="a values a:b:c for bonnet-myers")
    return ap


def build_config(args: argparse.Namespace) -> RunConfig:
    data = RunConfig.from_json(args.config) if args.config else {}
    data["command"] = args.command
    for name in ("out", "seed", "tol", "n", "N", "t", "samples", "r", "a_scan", "epsilon"):
        val = getattr(args, name)
        if val is not None:
            data[name] = val
    if isinstance(data.get("epsilon"), str) and data["epsilon"] != SUB:
        try:
            data["epsilon"] = float(data["epsilon"])
        except ValueError as exc:
            raise ConfigError(f"bad epsilon {data['epsilon']!r}") from exc
    if isinstance(data.get("N"), float) and data["N"].is_integer():
        data["N"] = int(data["N"])
    try:
        return RunConfig(**data).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def run(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    names = COMMANDS if cfg.command == "all" else (cfg.command,)
    all_ok = True
    for name in names:
        start = time.perf_counter()
        try:
            rows, summary = SUITES[name](cfg)
        except ConfigError as exc:
            print(f"config error in {name}: {exc}", file=sys.stderr)
            return 2
        except (ValueError, ArithmeticError) as exc:
            rows, summary = [], {"pass": False, "error": f"{type(exc).__name__}: {exc}"}
        write_table(out / f"{name}.csv", rows)
        (out / f"{name}.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        status = "PASS" if summary["pass"] else "FAIL"
        print(f"{name:13s} {status}  ({time.perf_counter() - start:.1f} s)  -> {out / (name + '.csv')}")
        all_ok &= bool(summary["pass"])
    return 0 if all_ok else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
