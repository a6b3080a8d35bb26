"""Command-line experiment runner driven by JSON manifests.

``nlreg eval|solve|regularize|verify MANIFEST [--output-dir D] [--seed S] [--threads N]``
and ``nlreg plot-data REPORT... --output OUT``.

Exit status: 0 success, 1 a stage failed, 2 the manifest could not be parsed,
3 a gated check failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import operators as ops
from .errors import NlregError, StageError
from .grid import (ANALYTIC_TAILS, AnalyticTail, Box, GridFunction, make_grid)
from .kernels import kernel_from_dict, load_kernel
from .operators import IsaacsSpec
from .problems import make_problem
from .regularize import certify_pipeline, pipeline
from .solver import SolveConfig, comparison_check, solve_dirichlet
from .verify import convergence_report, distributional_report, weak_convergence_gap

log = logging.getLogger("nlreg")

EXIT_OK, EXIT_STAGE, EXIT_PARSE, EXIT_GATE = 0, 1, 2, 3
COMMANDS = ("eval", "solve", "regularize", "verify")


class ManifestError(Exception):
    pass


class GateFailure(Exception):
    pass


# ----------------------------------------------------------------------------- parsing

def load_manifest(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror}") from None
    try:
        man = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(man, dict):
        raise ManifestError(f"{path}:1:1: manifest must be a JSON object")
    if man.get("command") not in COMMANDS:
        raise ManifestError(f"{path}: 'command' must be one of {', '.join(COMMANDS)}")
    man["_base"] = path.parent
    return man


def _path(base: Path, p) -> Path:
    q = Path(p)
    q = q if q.is_absolute() else base / q
    if not q.exists():
        raise ManifestError(f"referenced file does not exist: {q}")
    return q


def _json_file(base, p):
    q = _path(base, p)
    try:
        return json.loads(q.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{q}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _kernel(base, entry):
    if isinstance(entry, str):
        return load_kernel(_path(base, entry))
    return kernel_from_dict(entry)


def _grid_function(base, entry, spec) -> GridFunction:
    """Number (constant with tail), CSV path, or ``{"analytic": "cos"|"sin"}``."""
    if isinstance(entry, (int, float)):
        return GridFunction.constant(spec, float(entry))
    if isinstance(entry, str):
        gf = GridFunction.load(_path(base, entry))
        if gf.spec != spec:
            raise ManifestError(f"grid function {entry} lives on a different grid")
        return gf
    if isinstance(entry, dict) and entry.get("analytic") in ANALYTIC_TAILS:
        fn = ANALYTIC_TAILS[entry["analytic"]]
        return GridFunction.sample(spec, fn, AnalyticTail(fn, 0.0, 1.0, entry["analytic"]))
    raise ManifestError(f"cannot interpret grid function entry {entry!r}")


def _zeroth(base, entry, spec):
    if isinstance(entry, (int, float)):
        return float(entry)
    return _grid_function(base, entry, spec)


def _region(d) -> Box:
    if d is None:
        return Box.ball(1.0, 1, open=True)
    if "ball" in d:
        return Box.ball(float(d["ball"]), 1, open=bool(d.get("open", True)))
    return Box(tuple(d["lo"]), tuple(d["hi"]), bool(d.get("open", False)))


def build_problem(man: dict) -> dict:
    """Resolve the ``problem`` block into grid, family, f, g and region."""
    base = man["_base"]
    p = man.get("problem")
    if not isinstance(p, dict):
        raise ManifestError("manifest needs a 'problem' object")
    try:
        if "builtin" in p:
            P = make_problem(p["builtin"], **p.get("args", {}))
            out = {"spec": P.spec, "family": P.family, "f": P.f, "g": P.g, "region": P.region,
                   "exact": P.exact}
        else:
            gd = p["grid"]
            spec = make_grid(gd.get("n", 1), gd["R_dom"], gd["R_ext"], gd["h"])
            fam = p["family"]
            if isinstance(fam, str):
                fam = _json_file(base, fam)
            ks = [[_kernel(base, k) for k in row] for row in fam["kernels"]]
            cs = [[_zeroth(base, c, spec) for c in row] for row in fam.get("zeroth", [[0.0] * len(r) for r in ks])]
            f = p.get("f", 0.0)
            f = float(f) if isinstance(f, (int, float)) else _grid_function(base, f, spec)
            out = {"spec": spec, "family": IsaacsSpec(ks, cs), "f": f,
                   "g": _grid_function(base, p.get("g", 0.0), spec),
                   "region": _region(p.get("region")), "exact": None}
        if "u" in p:
            out["u"] = _grid_function(base, p["u"], out["spec"])
        return out
    except ManifestError:
        raise
    except KeyError as exc:
        raise ManifestError(f"problem is missing field {exc}") from None
    except (NlregError, TypeError, ValueError) as exc:
        raise ManifestError(f"invalid problem: {exc}") from None


def _solver_config(params) -> SolveConfig:
    try:
        return SolveConfig(**params.get("solver", {}))
    except (TypeError, NlregError) as exc:
        raise ManifestError(f"invalid solver block: {exc}") from None


# ----------------------------------------------------------------------------- output

def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items() if not str(k).startswith("_")}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if np.isfinite(v) else str(v)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    return o


def _write_json(path: Path, obj, meta: bool = False):
    obj = dict(_jsonable(obj))
    if meta:
        obj["metadata"] = {"written": time.strftime("%Y-%m-%dT%H:%M:%S")}
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except NlregError as exc:
        raise StageError(name, None, exc) from exc


# ----------------------------------------------------------------------------- commands

def cmd_eval(man, prob, out: Path, seed: int) -> dict:
    params = man.get("params", {})
    spec = prob["spec"]
    if "u" not in prob:
        raise ManifestError("eval needs problem.u")
    u = prob["u"]
    op = params.get("operator", "isaacs")
    I = prob["family"]
    region = _region(params.get("region", {"ball": spec.R_dom, "open": False}))
    nodes = np.flatnonzero(region.mask(spec))
    st = _stage("stencil", ops.make_stencil, spec, nodes)
    if op == "isaacs":
        vals = _stage("eval", ops.isaacs_grid, I, u, st)[0]
    elif op == "linear":
        vals = _stage("eval", ops.apply_linear, I.kernels[0][0], u, st)
    elif op == "frac-laplacian":
        vals = _stage("eval", ops.frac_laplacian_grid, u, float(params.get("s", I.params.s)), st)
    elif op in ("pucci-plus", "pucci-minus"):
        fn = ops.extremal_plus_grid if op == "pucci-plus" else ops.extremal_minus_grid
        vals = _stage("eval", fn, u, I.params, st)
    else:
        raise ManifestError(f"unknown operator {op!r}")
    _write_csv(out / "values.csv", ["x", "value"], zip(spec.axis[nodes], vals))
    return {"operator": op, "nodes": int(nodes.size), "sup": float(np.max(np.abs(vals)))}


def _solve(man, prob):
    cfg = _solver_config(man.get("params", {}))
    return _stage("solve", solve_dirichlet, prob["family"], prob["f"], prob["g"], prob["region"], cfg)


def cmd_solve(man, prob, out: Path, seed: int) -> dict:
    res = _solve(man, prob)
    res.u.save(out / "u.csv")
    summary = {"residual": res.residual, "iterations": res.iterations, "method": res.method}
    if prob.get("exact") is not None:
        summary["sup_error_vs_exact"] = float(np.max(np.abs(res.u.values - prob["exact"](prob["spec"].axis))))
    comp = man.get("params", {}).get("comparison")
    if comp is not None:
        rep = comparison_check(res, prob["g"], float(comp.get("C_circ", 0.0)), prob["family"].params)
        summary["comparison"] = rep.to_dict()
        if rep.passed is False:
            raise GateFailure(f"comparison bound failed: {rep.message}", summary)
    return summary


def cmd_regularize(man, prob, out: Path, seed: int) -> dict:
    params = man.get("params", {})
    schedule = params.get("schedule")
    if not schedule:
        raise ManifestError("regularize needs params.schedule")
    u = prob.get("u")
    solve_summary = None
    if u is None:
        res = _solve(man, prob)
        u = res.u
        solve_summary = {"residual": res.residual, "iterations": res.iterations}
    cfg = _solver_config(params)
    steps = pipeline(prob["family"], u, prob["f"], [float(e) for e in schedule], cfg)
    for k, st in enumerate(steps):
        d = out / f"step{k}"
        d.mkdir(exist_ok=True)
        st.u_eps.save(d / "u_eps.csv")
        st.f_eps.save(d / "f_eps.csv")
        _write_json(d / "operator.json", st.op.to_dict())
    keys = [k for k in steps[0].diagnostics if isinstance(steps[0].diagnostics[k], (int, float))]
    _write_csv(out / "diagnostics.csv", keys, ([st.diagnostics[k] for k in keys] for st in steps))
    table = convergence_report(steps, u, prob["family"].params.s)
    (out / "convergence.csv").write_text(table.to_csv())
    _write_json(out / "convergence.json", table.to_dict())
    cert = certify_pipeline(steps, prob["family"].modulus, cfg.tol)
    summary = {"steps": len(steps), "certification": cert.to_dict(), "solve": solve_summary,
               "flags": {"translation_invariant": [st.op.translation_invariant for st in steps],
                         "sup_only": [st.op.sup_only for st in steps]}}
    if not cert.passed:
        raise GateFailure("pipeline certification failed", summary)
    return summary


def cmd_verify(man, prob, out: Path, seed: int) -> dict:
    params = man.get("params", {})
    checks = params.get("checks", [])
    if not checks:
        raise ManifestError("verify needs params.checks")
    results = []
    spec = prob["spec"]
    for c in checks:
        kind = c.get("type")
        if kind == "weak-convergence":
            v = prob["u"] if prob.get("u") is not None else _grid_function(man["_base"], c.get("v", 0.0), spec)
            rep = _stage("weak-convergence", weak_convergence_gap, prob["family"], c["schedule"], v,
                         _region(c.get("region", {"ball": 0.5, "open": False})))
            _write_json(out / "gap.json", rep.to_dict())
            results.append({"check": kind, "passed": rep.passed, "slope": rep.slope,
                            "reference_slope": rep.reference_slope, "constant": rep.constant})
        elif kind == "distributional":
            res = _solve(man, prob)
            K = prob["family"].kernels[0][0]
            f = prob["f"]
            fL = GridFunction.sample(spec, lambda x: np.full(np.shape(x), -float(f))) \
                if isinstance(f, (int, float)) else f * -1.0
            tol = float(c.get("tolerance", 10 * (res.residual + 1e-10)))
            rep = _stage("distributional", distributional_report, K, res.u, fL,
                         int(c.get("tests", 20)), seed)
            _write_json(out / "distributional.json", rep.to_dict())
            results.append({"check": kind, "passed": rep.residual <= tol,
                            "residual": rep.residual, "tolerance": tol, "seed": seed})
        elif kind == "maximum-principle":
            rng = np.random.default_rng(seed)
            worst, ok = 0.0, True
            for _ in range(int(c.get("trials", 10))):
                g = GridFunction(spec, rng.uniform(-1.0, 1.0, spec.size))
                res = _stage("solve", solve_dirichlet, prob["family"], 0.0, g, prob["region"])
                rep = comparison_check(res, g, 0.0, prob["family"].params)
                ok &= bool(rep.passed)
                worst = max(worst, rep.lhs - rep.g_sup)
            results.append({"check": kind, "passed": ok, "worst_excess": worst, "seed": seed})
        else:
            raise ManifestError(f"unknown check type {kind!r}")
    verdict = {"passed": all(r["passed"] for r in results), "checks": results}
    _write_json(out / "verdict.json", verdict)
    if not verdict["passed"]:
        raise GateFailure("verification failed", verdict)
    return verdict


HANDLERS = {"eval": cmd_eval, "solve": cmd_solve, "regularize": cmd_regularize, "verify": cmd_verify}


def run(manifest_path, output_dir=None, seed=None, command=None) -> int:
    """Execute a manifest; returns the exit status."""
    try:
        man = load_manifest(manifest_path)
        if command is not None and man["command"] != command:
            raise ManifestError(f"manifest command {man['command']!r} does not match {command!r}")
        seed = int(man.get("seed", 0) if seed is None else seed)
        out = Path(output_dir or man.get("output_dir") or "nlreg-out")
        if not out.is_absolute() and output_dir is None:
            out = man["_base"] / out
        prob = build_problem(man)
    except ManifestError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(seed)
    try:
        summary = HANDLERS[man["command"]](man, prob, out, seed)
        status, verdict = EXIT_OK, "PASS"
    except ManifestError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except GateFailure as exc:
        print(f"gated check failed: {exc.args[0]}", file=sys.stderr)
        summary = exc.args[1] if len(exc.args) > 1 else {}
        status, verdict = EXIT_GATE, "FAIL"
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write_json(out / "summary.json", {"command": man["command"], "status": EXIT_STAGE,
                                           "stage": exc.stage, "epsilon": exc.epsilon,
                                           "error": str(exc.cause)}, meta=True)
        return EXIT_STAGE
    except NlregError as exc:
        print(f"error: stage '{man['command']}' failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    _write_json(out / "summary.json", {"command": man["command"], "status": status,
                                       "verdict": verdict, "seed": seed, "result": summary}, meta=True)
    print(f"{man['command']}: {verdict} (outputs in {out})")
    return status


# ----------------------------------------------------------------------------- plot data

def emit_plot_data(report_paths) -> str:
    """Long-format ``quantity,epsilon,value`` CSV from gap and convergence reports."""
    rows = []
    for p in report_paths:
        try:
            rep = json.loads(Path(p).read_text())
            kind = rep.get("kind")
            if kind == "gap":
                rows += [("gap", float(e), float(g)) for e, g in zip(rep["epsilons"], rep["gaps"])]
            elif kind == "convergence":
                for r in rep["rows"]:
                    rows += [(k, float(r["epsilon"]), float(v)) for k, v in r.items() if k != "epsilon"]
            else:
                raise ManifestError(f"{p}: unknown report kind {kind!r}")
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{p}: malformed report ({exc})") from None
    rows.sort(key=lambda r: (r[0], r[1]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "epsilon", "value"])
    for q, e, v in rows:
        w.writerow([q, repr(e), repr(v)])
    return buf.getvalue()


# ----------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlreg", description="Nonlocal operator regularization toolkit")
    ap.add_argument("--verbosity", type=int, default=1, help="0 quiet, 1 info, 2 debug")
    sub = ap.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sp = sub.add_parser(c, help=f"run a '{c}' manifest")
        sp.add_argument("manifest")
        sp.add_argument("--output-dir")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker cap for grid sweeps (the sweeps are currently serial)")
        sp.add_argument("--verbosity", type=int, default=argparse.SUPPRESS)
    pp = sub.add_parser("plot-data", help="tidy reports into quantity,epsilon,value rows")
    pp.add_argument("reports", nargs="*")
    pp.add_argument("--output", "-o")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "plot-data":
        try:
            text = emit_plot_data(args.reports)
        except ManifestError as exc:
            print(f"parse error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        if args.output:
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    return run(args.manifest, args.output_dir, args.seed, args.command)


if __name__ == "__main__":
    sys.exit(main())
