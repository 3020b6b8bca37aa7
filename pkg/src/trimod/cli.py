"""Command line front end: ``trimod classify | verify | report``.

Exit codes: 0 pass, 1 usage or configuration error, 2 undecided verdicts,
3 verification failure.  JSON output is deterministic (sorted keys, no
timestamps), so identical inputs give byte-identical reports.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import measure_rep as mr
from . import weights_series as ws
from . import weyl_algebra as wa
from .core_matrix import IndexWindow, WindowError, elementary, multiply

EXIT_OK, EXIT_CONFIG, EXIT_UNDECIDED, EXIT_FAIL = 0, 1, 2, 3

SYMBOLIC_CHECKS = ("lemma_D_inverse", "bracket_AR_w", "AL_brackets", "triple_commutator")
NUMERIC_CHECKS = ("commutation", "J_involution", "cocycle", "delta_crosscheck", "TgT", "Urm",
                  "phase_commutators", "generator_fd", "unitarity", "moments")
ALL_CHECKS = SYMBOLIC_CHECKS + NUMERIC_CHECKS


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    config_path: str | None = None
    out: str | None = None
    radius: int | None = None
    seed: int | None = 0
    checks: list[str] | None = None
    tol: float | None = None
    json_out: bool = False
    inputs: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.radius is not None and self.radius < 1:
            raise UsageError("--window must be >= 1")
        if self.tol is not None and not self.tol > 0:
            raise UsageError("--tol must be positive")
        if self.checks:
            unknown = [c for c in self.checks if c not in ALL_CHECKS]
            if unknown:
                raise UsageError(f"unknown checks {unknown}; available: {', '.join(ALL_CHECKS)}")


def _threads() -> int:
    raw = os.environ.get("TRIMOD_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"TRIMOD_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError("TRIMOD_THREADS must be >= 1")
    return n


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _load_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc


def _load_config(rc: RunConfig) -> dict:
    if rc.config_path is None:
        return {}
    obj = _load_json(rc.config_path)
    if not isinstance(obj, dict):
        raise UsageError(f"{rc.config_path}: top level must be a JSON object")
    return obj


def _weights_from(obj: dict) -> ws.WeightConfig:
    raw = obj.get("weights", obj if "family" in obj else {"family": "geometric", "s": 2})
    return ws.parse_weight_config(raw)


def _window_from(obj: dict, rc: RunConfig, cfg: ws.WeightConfig, default_radius: int = 3) -> IndexWindow:
    if rc.radius is not None:
        w = IndexWindow.symmetric(rc.radius)
    elif "window" in obj:
        v = obj["window"]
        if isinstance(v, int) and not isinstance(v, bool):
            if v < 1:
                raise UsageError("window radius must be >= 1")
            w = IndexWindow.symmetric(v)
        elif isinstance(v, list) and len(v) == 2 and all(isinstance(i, int) for i in v):
            w = IndexWindow(v[0], v[1])
        else:
            raise UsageError("'window' must be a radius or [lo, hi]")
    elif isinstance(cfg, ws.TableWeights):
        w = cfg.window
    else:
        w = IndexWindow.symmetric(default_radius)
    if isinstance(cfg, ws.TableWeights) and w not in cfg.window:
        raise UsageError(f"window {w} exceeds table window {cfg.window}")
    return w


def _budget_from(obj: dict) -> ws.TruncationBudget:
    b = obj.get("budget", {})
    if not isinstance(b, dict):
        raise UsageError("'budget' must be an object")
    try:
        return ws.TruncationBudget(**b)
    except TypeError as exc:
        raise UsageError(f"bad budget: {exc}") from exc


def _emit(rc: RunConfig, obj: dict, summary: list[str], out=sys.stdout) -> None:
    text = _dump(obj)
    if rc.out:
        with open(rc.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if rc.json_out:
        out.write(text)
    else:
        out.write("\n".join(summary) + "\n")


# -- classify -----------------------------------------------------------------------------

def cmd_classify(rc: RunConfig, out=sys.stdout) -> int:
    obj = _load_config(rc)
    cfg = _weights_from(obj)
    window = _window_from(obj, rc, cfg)
    budget = _budget_from(obj)
    with ThreadPoolExecutor(max_workers=_threads()) as ex:
        report = ws.classify(cfg, window, budget, executor=ex)
    _emit(rc, report.to_json_obj(), report.summary_lines(), out)
    return EXIT_UNDECIDED if report.undecided else EXIT_OK


# -- verify ----------------------------------------------------------------------------------

@dataclass
class VerifyContext:
    cfg: ws.WeightConfig
    window: IndexWindow
    seed: int
    tol: float | None
    points: int
    convention: str
    fd_window: IndexWindow

    def spec(self, window: IndexWindow | None = None) -> mr.GaussianSpec:
        return mr.GaussianSpec.from_config(self.cfg, window or self.window)

    def rational(self, window: IndexWindow | None = None) -> wa.RationalWeights:
        return wa.RationalWeights.from_config(self.cfg, window or self.window)

    def ntol(self, default: float) -> float:
        return self.tol if self.tol is not None else default


def _symbolic(report: wa.IdentityReport) -> dict:
    return report.to_json_obj(include_tuples=False)


def _check_lemma_D_inverse(ctx):
    return _symbolic(wa.verify_lemma_D_inverse(ctx.window, ctx.rational()))


def _check_bracket_AR_w(ctx):
    return _symbolic(wa.verify_bracket_AR_w(ctx.window, ctx.rational(), ctx.convention))


def _check_AL_brackets(ctx):
    return _symbolic(wa.verify_AL_brackets(ctx.window, ctx.rational()))


def _check_triple_commutator(ctx):
    return _symbolic(wa.verify_triple_commutator(ctx.window, ctx.rational(), convention=ctx.convention))


def _taus(window: IndexWindow, seed: int, count: int):
    rng = np.random.default_rng(seed)
    pairs = window.pairs()
    out = []
    for _ in range(count):
        tau = None
        for _ in range(3):
            p, q = pairs[rng.integers(len(pairs))]
            e = elementary(window, p, q, float(rng.uniform(-1.5, 1.5)))
            tau = e if tau is None else multiply(tau, e)
        out.append(tau)
    return out


def _numeric_multi(name: str, reports: list[mr.NumericReport], tol: float, points: int) -> dict:
    err = max((r.max_rel_err for r in reports), default=0.0)
    rep = mr.NumericReport(name, err, points, tol, {"cases": len(reports)})
    obj = rep.to_json_obj()
    obj["pass"] = all(r.passed for r in reports)
    return obj


def _check_commutation(ctx):
    spec = ctx.spec()
    pts = spec.sample(ctx.points, ctx.seed + 11, clip=3.0)
    tol = ctx.ntol(1e-9)
    reps = [mr.check_commutation(spec, tau, pts, tol=tol) for tau in _taus(ctx.window, ctx.seed + 12, 10)]
    return _numeric_multi("commutation", reps, tol, len(pts))


def _check_J_involution(ctx):
    spec = ctx.spec()
    pts = spec.sample(ctx.points, ctx.seed + 21, clip=3.0)
    return mr.check_J_involution(spec, pts, tol=ctx.ntol(1e-12)).to_json_obj()


def _check_cocycle(ctx):
    spec = ctx.spec()
    pts = spec.sample(ctx.points, ctx.seed + 31, clip=3.0)
    taus = _taus(ctx.window, ctx.seed + 32, 6)
    tol = ctx.ntol(1e-10)
    reps = [mr.check_cocycle(spec, taus[i], taus[i + 1], pts, tol=tol) for i in range(0, 6, 2)]
    return _numeric_multi("cocycle", reps, tol, len(pts))


def _check_delta_crosscheck(ctx):
    spec = ctx.spec()
    pts = spec.sample(ctx.points, ctx.seed + 41, clip=3.0)
    return mr.check_delta_crosscheck(spec, pts, tol=ctx.ntol(1e-10)).to_json_obj()


def _check_TgT(ctx):
    spec = ctx.spec()
    pts = spec.sample(ctx.points, ctx.seed + 51, clip=3.0)
    pairs = ctx.window.pairs()
    g = mr.TestFunction.make([(1, {pairs[-1]: 1, pairs[0]: 1}), (0.5, {})], label="g")
    tol = ctx.ntol(1e-9)
    reps = [mr.check_TgT(spec, tau, g, pts, tol=tol) for tau in _taus(ctx.window, ctx.seed + 52, 4)]
    return _numeric_multi("TgT", reps, tol, len(pts))


def _urm_pairs(window: IndexWindow):
    return [(r, m) for r in range(window.lo, window.hi) for m in range(r + 1, window.hi)]


S_VALUES = (0.0, 0.35, 0.7, -1.1, 1.9)


def _check_Urm(ctx):
    spec = ctx.spec()
    pts = spec.sample(max(ctx.points // 5, 50), ctx.seed + 61, clip=3.0)
    tol = ctx.ntol(1e-9)
    pairs = _urm_pairs(ctx.window)
    if not pairs:
        return mr.NumericReport("Urm", 0.0, 0, tol, skipped="insufficient window").to_json_obj()
    reps = [mr.verify_Urm(spec, r, m, S_VALUES, pts, tol=tol, seed=ctx.seed + 62) for r, m in pairs]
    return _numeric_multi("Urm", reps, tol, len(pts))


def _check_phase_commutators(ctx):
    spec = ctx.spec()
    pts = spec.sample(max(ctx.points // 5, 50), ctx.seed + 71, clip=3.0)
    tol = ctx.ntol(1e-9)
    pairs = _urm_pairs(ctx.window)
    if not pairs:
        return mr.NumericReport("phase_commutators", 0.0, 0, tol, skipped="insufficient window").to_json_obj()
    results = {}
    ok = True
    cs = {}
    for r, m in pairs:
        res = mr.verify_phase_commutators(spec, r, m, S_VALUES, pts, tol=tol, seed=ctx.seed + 72)
        for name, pr in res.items():
            ok = ok and pr.dependence_ok
            cs.setdefault(name, []).append(pr.c)
            results[f"{name}[{r},{m}]"] = pr.to_json_obj()
    spread = max(float(np.ptp(v)) for v in cs.values())
    return {"name": "phase_commutators", "kind": "numeric", "pass": bool(ok and spread <= tol * 2),
            "constants": {k: float(np.median(v)) for k, v in cs.items()},
            "c_spread_across_pairs": spread, "points": len(pts), "tol": tol, "details": results}


def _check_generator_fd(ctx):
    spec = ctx.spec(ctx.fd_window)
    pts = spec.sample(200, ctx.seed + 81, clip=3.0)
    tol = ctx.ntol(1e-6)
    kind_right = "right" if ctx.convention == "rk" else "right_kr"
    reps = []
    for p, q in ctx.fd_window.pairs():
        reps.append(mr.generator_fd_check(spec, "left", p, q, pts, tol=tol))
        reps.append(mr.generator_fd_check(spec, kind_right, p, q, pts, tol=tol))
    obj = _numeric_multi("generator_fd", reps, tol, len(pts))
    obj["window"] = [ctx.fd_window.lo, ctx.fd_window.hi]
    obj["convention"] = ctx.convention
    return obj


def _unitarity_tau(window: IndexWindow):
    p = 0 if window.lo <= 0 < window.hi else window.lo
    return elementary(window, p, p + 1, 0.5)


def _check_unitarity(ctx):
    spec = ctx.spec()
    tau = _unitarity_tau(ctx.window)
    rows, zmax = [], 0.0
    for i, f in enumerate(mr.test_dictionary(spec)):
        est = mr.check_unitarity(spec, tau, f, 100_000, ctx.seed + 91 + i)
        z = abs(est.mean) / est.std_error if est.std_error > 0 else 0.0
        zmax = max(zmax, z)
        rows.append({"function": f.label, **est.to_json_obj(), "z": z})
    return {"name": "unitarity", "kind": "monte-carlo", "statistic": "z-score", "z_max": zmax,
            "limit": 3.0, "pass": zmax <= 3.0, "samples": 100_000, "details": rows}


def _check_moments(ctx):
    spec = ctx.spec()
    rows, zmax = [], 0.0
    for i, (k, n) in enumerate(ctx.window.pairs()):
        est = mr.mc_moment(spec, k, n, 100_000, ctx.seed + 101 + i)
        target = 1 / (2 * spec.b_of(k, n))
        z = abs(est.mean - target) / est.std_error
        zmax = max(zmax, z)
        rows.append({"pair": [k, n], "mean": est.mean.real, "target": target, "z": z})
    return {"name": "moments", "kind": "monte-carlo", "statistic": "z-score", "z_max": zmax,
            "limit": 5.0, "pass": zmax <= 5.0, "samples": 100_000, "details": rows}


CHECKS: dict[str, Callable[[VerifyContext], dict]] = {
    "lemma_D_inverse": _check_lemma_D_inverse,
    "bracket_AR_w": _check_bracket_AR_w,
    "AL_brackets": _check_AL_brackets,
    "triple_commutator": _check_triple_commutator,
    "commutation": _check_commutation,
    "J_involution": _check_J_involution,
    "cocycle": _check_cocycle,
    "delta_crosscheck": _check_delta_crosscheck,
    "TgT": _check_TgT,
    "Urm": _check_Urm,
    "phase_commutators": _check_phase_commutators,
    "generator_fd": _check_generator_fd,
    "unitarity": _check_unitarity,
    "moments": _check_moments,
}


def _verify_context(rc: RunConfig, obj: dict) -> tuple[VerifyContext, list[str]]:
    cfg = _weights_from(obj)
    window = _window_from(obj, rc, cfg)
    conv = obj.get("ar_convention", "rk")
    if conv not in ("rk", "kr"):
        raise UsageError("'ar_convention' must be 'rk' or 'kr'")
    points = obj.get("points", 1000)
    if not isinstance(points, int) or points < 1:
        raise UsageError("'points' must be a positive integer")
    if "fd_window" in obj:
        lo, hi = obj["fd_window"]
        fd_window = IndexWindow(lo, hi)
    elif isinstance(cfg, ws.TableWeights):
        fd_window = window
    else:
        fd_window = IndexWindow(-1, 2)
    tol = rc.tol if rc.tol is not None else obj.get("tol")
    if tol is not None and not (isinstance(tol, (int, float)) and tol > 0):
        raise UsageError("tolerance must be positive")
    seed = rc.seed if rc.seed is not None else obj.get("seed", 0)
    checks = rc.checks or obj.get("checks") or list(ALL_CHECKS)
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}")
    ctx = VerifyContext(cfg, window, int(seed), tol, points, conv, fd_window)
    return ctx, list(checks)


def cmd_verify(rc: RunConfig, out=sys.stdout) -> int:
    obj = _load_config(rc)
    ctx, checks = _verify_context(rc, obj)
    with ThreadPoolExecutor(max_workers=_threads()) as ex:
        results = list(ex.map(lambda name: CHECKS[name](ctx), checks))
    report = {
        "kind": "verify",
        "config": ctx.cfg.to_json_obj(),
        "window": [ctx.window.lo, ctx.window.hi],
        "seed": ctx.seed,
        "ar_convention": ctx.convention,
        "checks": results,
        "pass": all(r["pass"] for r in results),
        "assumptions": [ws.ERGODICITY_ASSUMPTION],
    }
    summary = [_verify_line(r) for r in results]
    summary.append("all checks passed" if report["pass"] else "verification FAILED")
    _emit(rc, report, summary, out)
    return EXIT_OK if report["pass"] else EXIT_FAIL


def _verify_line(r: dict) -> str:
    status = "pass" if r["pass"] else "FAIL"
    if r.get("kind") == "symbolic":
        detail = f"exact-zero {r['exact_zero']}, residual {r['residual']}, skipped {r['skipped']}"
    elif "z_max" in r:
        detail = f"max z {r['z_max']:.3g} (limit {r['limit']})"
    elif "constants" in r:
        detail = ", ".join(f"c[{k}] = {v:.12g}" for k, v in sorted(r["constants"].items()))
    else:
        detail = f"max rel err {r['max_rel_err']:.3g} (tol {r['tol']:g})"
    return f"{r['name']:<20} {status:<5} {detail}"


# -- report ------------------------------------------------------------------------------------

def _report_rows(path: str, obj: Any) -> list[tuple[str, str, str, str]]:
    rows = []
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: not a report object")
    kind = obj.get("kind")
    if kind == "classification":
        for name, c in sorted(obj.get("conditions", {}).items()):
            rows.append((path, "classify", name, c.get("verdict", "?")))
        for flag in obj.get("flags", []):
            rows.append((path, "classify", "flag", flag))
    elif kind == "verify":
        for r in obj.get("checks", []):
            rows.append((path, "verify", r.get("name", "?"), "pass" if r.get("pass") else "FAIL"))
    else:
        raise UsageError(f"{path}: unknown report kind {kind!r}")
    return rows


def cmd_report(rc: RunConfig, out=sys.stdout) -> int:
    paths = list(rc.inputs)
    if rc.config_path:
        paths.insert(0, rc.config_path)
    rows = []
    for p in paths:
        rows.extend(_report_rows(p, _load_json(p)))
    if rc.json_out or rc.out:
        merged = {"kind": "report", "rows": [dict(zip(("file", "source", "item", "result"), r)) for r in rows]}
        if rc.out:
            with open(rc.out, "w", encoding="utf-8") as fh:
                fh.write(_dump(merged))
        if rc.json_out:
            out.write(_dump(merged))
            return EXIT_OK
    header = ("file", "source", "item", "result")
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out.write(fmt.format(*header).rstrip() + "\n")
    for r in rows:
        out.write(fmt.format(*r).rstrip() + "\n")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration (or, for report, an input report)")
    common.add_argument("--out", help="write the JSON report to this path")
    common.add_argument("--window", type=int, help="symmetric window radius R, giving [-R, R]")
    common.add_argument("--seed", type=int, help="root seed for all random streams")
    common.add_argument("--checks", help="comma-separated subset of checks")
    common.add_argument("--tol", type=float, help="override numeric tolerances")
    common.add_argument("--json", action="store_true", help="print JSON instead of a text summary")
    parser = argparse.ArgumentParser(prog="trimod", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("classify", parents=[common], help="classify a weight family")
    sub.add_parser("verify", parents=[common], help="run symbolic and numeric checks")
    rep = sub.add_parser("report", parents=[common], help="merge JSON reports into a table")
    rep.add_argument("inputs", nargs="*", help="report files")
    return parser


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        rc = RunConfig(args.subcommand, args.config, args.out, args.window,
                       args.seed if args.seed is not None else (0 if args.subcommand != "verify" else None),
                       args.checks.split(",") if args.checks else None, args.tol, args.json,
                       getattr(args, "inputs", []) or [])
        handler = {"classify": cmd_classify, "verify": cmd_verify, "report": cmd_report}[rc.subcommand]
        return handler(rc, out)
    except (UsageError, ws.ConfigError, WindowError, ValueError) as exc:
        print(f"trimod: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
