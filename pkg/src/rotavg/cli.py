"""Command-line entry point: solve, synth, eval, cds, stats, sweep.

Every command emits a JSON report carrying ``schema_version`` and the fully
resolved configuration.  Exit codes: 0 ok, 1 solver failure, 2 I/O,
3 bad configuration; failures print an error JSON ``{"kind": ...}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .cds import ReferenceSet, task_specific_cds, traditional_cds
from .engine import EngineConfig, write_trace
from .errors import ConfigError, ParseError, RotavgError
from .graph import largest_component, load_graph, load_labels, load_rotations, save_graph, save_labels, save_rotations
from .metrics import align_and_score, graph_stats, outlier_scores, reference_accuracy
from .pipelines import MODES, RunConfig, run_pipeline
from .synth import RandomStructure, SynthConfig, generate, sweep, write_csv

log = logging.getLogger("rotavg")

SCHEMA_VERSION = 1
TRACE = 5  # below DEBUG: per-iteration engine decisions
EXIT_OK, EXIT_SOLVER, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _clean(x):
    """JSON-safe copy: NaN/inf become null, tuples lists, numpy scalars floats."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _emit(report: dict, dest: str | None) -> None:
    text = json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"
    if dest:
        Path(dest).write_text(text)
    else:
        sys.stdout.write(text)


def _report(command: str, config: dict, result: dict, timings: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "command": command,
        "config": config,
        "result": result,
        "timings": timings or {},
    }


def _csv_line(d: dict) -> str:
    keys = list(d)
    vals = ["" if d[k] is None else str(d[k]) for k in keys]
    return ",".join(keys) + "\n" + ",".join(vals) + "\n"


# ---------------------------------------------------------------------------
# commands

def cmd_solve(args) -> int:
    cfg = RunConfig(
        mode=args.mode,
        theta_th=args.theta,
        global_rate=args.global_rate,
        clusters=args.clusters,
        rng_seed=args.seed,
        freeze_reference=args.freeze_reference,
        min_community_size=args.min_community_size,
    )
    g = load_graph(args.input)
    gt = load_rotations(args.gt) if args.gt else None
    res = run_pipeline(g, cfg)
    if args.out:
        save_rotations(res.rotations, args.out)
    if args.trace_out:
        with open(args.trace_out, "w") as fh:
            write_trace(res.trace, fh)
    if args.assignment_out and res.assignment:
        Path(args.assignment_out).write_text(
            json.dumps({str(v): c for v, c in sorted(res.assignment.items())}) + "\n"
        )
    result = res.summary()
    if gt is not None:
        ev = align_and_score(res.rotations, gt)
        result["median_error"] = ev.median_error
        result["mean_error"] = ev.mean_error
        result["n_common"] = ev.n_common
        if res.reference is not None:
            result["e_ref"] = reference_accuracy(res.reference, gt)
    if args.labels:
        result["outliers"] = outlier_scores(res.inliers or set(), load_labels(args.labels)).as_dict()
    config = {**cfg.as_dict(), "input": args.input, "gt": args.gt, "out": args.out}
    _emit(_report("solve", config, result, res.timings), args.report)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.structure:
        structure = load_graph(args.structure)
    else:
        if args.n is None or args.n < 3:
            raise ConfigError("--n (>= 3) or --structure is required")
        if not 0 < args.edge_prob <= 1:
            raise ConfigError("--edge-prob must lie in (0, 1]")
        structure = RandomStructure(args.n, args.edge_prob)
    try:
        cfg = SynthConfig(sigma=args.sigma, p=args.p, rng_seed=args.seed, structure=structure)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        inst = generate(cfg)
    prefix = args.out_prefix
    paths = {"eg": f"{prefix}.eg", "gt": f"{prefix}.gt", "labels": f"{prefix}.labels"}
    save_graph(inst.graph, paths["eg"])
    save_rotations(inst.gt, paths["gt"])
    save_labels(inst.outlier_labels, paths["labels"])
    config = {
        "sigma": args.sigma, "p": args.p, "seed": args.seed,
        "structure": args.structure or {"n": args.n, "edge_probability": args.edge_prob},
        "out_prefix": prefix,
    }
    result = {
        "files": paths,
        "n_vertices": inst.graph.n_vertices,
        "n_edges": inst.graph.n_edges,
        "n_outliers": len(inst.outliers),
        "warnings": [str(w.message) for w in caught],
    }
    _emit(_report("synth", config, result), args.report)
    return EXIT_OK


def cmd_eval(args) -> int:
    est = load_rotations(args.est)
    gt = load_rotations(args.gt)
    ev = align_and_score(est, gt, args.average)
    result = ev.as_dict()
    if args.per_vertex:
        result["per_vertex_errors"] = {str(v): e for v, e in ev.per_vertex_errors.items()}
    if args.csv:
        sys.stdout.write(_csv_line({k: result[k] for k in ("n_common", "median_error", "mean_error")}))
        return EXIT_OK
    _emit(_report("eval", {"est": args.est, "gt": args.gt, "average": args.average}, result), args.report)
    return EXIT_OK


def cmd_cds(args) -> int:
    if args.theta <= 0:
        raise ConfigError("--theta must be positive")
    g = load_graph(args.input)
    vertices = largest_component(g)
    t0 = time.perf_counter()
    if args.algorithm == "traditional":
        rng = np.random.default_rng(args.seed) if args.seed is not None else None
        ref: ReferenceSet = traditional_cds(g, args.weighting, vertices=vertices, rng=rng)
    else:
        ref = task_specific_cds(g, EngineConfig(theta_th=args.theta, global_rate=args.global_rate), vertices)
    elapsed = time.perf_counter() - t0
    result = {
        "algorithm": ref.algorithm,
        "members": ref.members,
        "n_ref": ref.n_ref,
        "connected": ref.connected,
        "dominating": ref.dominating,
    }
    if args.gt and ref.rotations:
        result["e_ref"] = reference_accuracy(ref, load_rotations(args.gt))
    if args.out and ref.rotations:
        save_rotations(ref.rotations, args.out)
    config = {"input": args.input, "algorithm": args.algorithm, "weighting": args.weighting,
              "seed": args.seed, "theta_th": args.theta, "global_rate": args.global_rate}
    _emit(_report("cds", config, result, {"total": elapsed}), args.report)
    return EXIT_OK


def cmd_stats(args) -> int:
    g = load_graph(args.input)
    gt = load_rotations(args.gt) if args.gt else None
    st = graph_stats(g, gt).as_dict()
    if args.csv:
        sys.stdout.write(_csv_line(st))
        return EXIT_OK
    _emit(_report("stats", {"input": args.input, "gt": args.gt}, st), args.report)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.structure:
        structure = load_graph(args.structure)
    else:
        structure = RandomStructure(args.n, args.edge_prob)
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    if any(s < 0 for s in args.sigmas) or any(not 0 <= p <= 100 for p in args.ps):
        raise ConfigError("sigmas must be >= 0 and ps within [0, 100]")
    solver = "spanning-tree" if args.solver == "spanning-tree-baseline" else args.solver
    RunConfig(mode=solver, theta_th=args.theta)  # validate early
    rows = sweep(structure, args.sigmas, args.ps, args.trials, solver, args.seed,
                 threads=args.threads, run_config={"theta_th": args.theta})
    with open(args.out, "w") if args.out else _nullctx(sys.stdout) as fh:
        write_csv(rows, fh)
    return EXIT_OK


class _nullctx:
    def __init__(self, obj):
        self.obj = obj

    def __enter__(self):
        return self.obj

    def __exit__(self, *exc):
        return False


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rotavg", description="Robust incremental rotation averaging.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="warning", choices=["trace", "debug", "info", "warning", "error"])
    p.add_argument("--threads", type=int, default=1, help="worker cap for parallel stages")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="estimate absolute rotations from an EG file")
    s.add_argument("input")
    s.add_argument("--mode", default="irav4", choices=list(MODES) + ["spanning-tree-baseline"])
    s.add_argument("--theta", type=float, default=3.0, help="outlier threshold, degrees")
    s.add_argument("--global-rate", type=float, default=0.05)
    s.add_argument("--clusters", default="auto", help="'auto', a count, or 1 for single-cluster mode")
    s.add_argument("--min-community-size", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--freeze-reference", action="store_true")
    s.add_argument("--out", help="rotations file (v records)")
    s.add_argument("--report", help="report JSON path (default stdout)")
    s.add_argument("--gt", help="ground-truth rotations for error reporting")
    s.add_argument("--labels", help="outlier labels (o records) for precision/recall")
    s.add_argument("--trace-out", help="JSON-lines engine trace")
    s.add_argument("--assignment-out", help="cluster assignment JSON")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("synth", help="generate a synthetic instance")
    s.add_argument("--n", type=int)
    s.add_argument("--edge-prob", type=float, default=0.3)
    s.add_argument("--structure", help="EG file whose topology is reused")
    s.add_argument("--sigma", type=float, default=5.0)
    s.add_argument("--p", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval", help="gauge-aligned error of estimated rotations")
    s.add_argument("est")
    s.add_argument("gt")
    s.add_argument("--average", default="geodesic_l1", choices=["geodesic_l1", "chordal_l2"])
    s.add_argument("--per-vertex", action="store_true")
    s.add_argument("--csv", action="store_true")
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("cds", help="extract a connected dominating set")
    s.add_argument("input")
    s.add_argument("--algorithm", default="task-specific", choices=["traditional", "task-specific"])
    s.add_argument("--weighting", default="none", choices=["none", "degree"])
    s.add_argument("--seed", type=int, help="randomized tie-break (traditional only)")
    s.add_argument("--theta", type=float, default=3.0)
    s.add_argument("--global-rate", type=float, default=0.05)
    s.add_argument("--gt")
    s.add_argument("--out")
    s.add_argument("--report")
    s.set_defaults(func=cmd_cds)

    s = sub.add_parser("stats", help="graph statistics")
    s.add_argument("input")
    s.add_argument("--gt")
    s.add_argument("--csv", action="store_true")
    s.add_argument("--report")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("sweep", help="synthetic (sigma, p) grid")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--edge-prob", type=float, default=0.3)
    s.add_argument("--structure")
    s.add_argument("--sigmas", type=float, nargs="+", default=[5.0, 10.0])
    s.add_argument("--ps", type=float, nargs="+", default=[0, 10, 20, 30, 40, 50])
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--solver", default="irav4", choices=["ira", "irav4", "spanning-tree", "spanning-tree-baseline"])
    s.add_argument("--theta", type=float, default=3.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_sweep)
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    sys.stdout.write(json.dumps({"error": {"kind": kind, "type": type(exc).__name__, "message": str(exc)}}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    logging.addLevelName(TRACE, "TRACE")
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    level = TRACE if args.log_level == "trace" else getattr(logging, args.log_level.upper())
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        return _fail("config", ConfigError("--threads must be >= 1"), EXIT_CONFIG)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (OSError, ParseError) as exc:
        return _fail("io", exc, EXIT_IO)
    except (RotavgError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail("solver", exc, EXIT_SOLVER)


if __name__ == "__main__":
    sys.exit(main())
