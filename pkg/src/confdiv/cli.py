"""Command-line entry point ``confdiv``.

Exit codes: 0 success, 2 invalid input or violated precondition,
3 solver did not converge (diagnostics are still written).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import clustering
from ._io import atomic_write, to_json
from .conformal import DivergenceSpec, conformal_div, parse_weight, scaled_conformal_div, symmetry_defect
from .errors import ConfDivError, NoConvergence
from .generators import get_generator
from .minimizers import (
    ORTH_TOL,
    ROOT_TOL,
    Sample,
    left_minimizer,
    right_minimizer,
    right_minimizer_1d,
    right_minimizer_nd,
    scaled_left_minimizer,
)
from .robustness import robustness_sweep, rows_to_csv
from .uv_structure import RELATION_TOL, finite_interval, make_structure, structure_from_text

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


def _vector(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.strip("[]{}() ").split(",") if t.strip()])


def load_sample(text: str) -> Sample:
    """Read points from a JSON file or an inline literal such as ``{1,7}``."""
    path = Path(text)
    if path.is_file():
        payload = json.loads(path.read_text())
    else:
        stripped = text.strip()
        if stripped.startswith("{") and ":" not in stripped:
            stripped = "[" + stripped[1:-1] + "]"
        elif not stripped.startswith(("[", "{")):
            stripped = "[" + stripped + "]"
        payload = json.loads(stripped)
    if isinstance(payload, dict):
        return Sample.of(payload["points"], payload.get("weights"))
    return Sample.of(payload)


def _spec_from_args(args, dim=None):
    gen = get_generator(args.gen)
    weight = parse_weight(args.weight)
    structure = None
    if args.structure not in (None, "", "default"):
        structure = structure_from_text(gen, args.structure, dim=dim)
    return DivergenceSpec(gen, weight, structure)


def _emit(args, payload) -> None:
    if args.format == "csv" and isinstance(payload, dict):
        lines = ["key,value"]
        for key, value in payload.items():
            if isinstance(value, (list, tuple)):
                value = ";".join(format(float(v), ".17g") if not isinstance(v, list)
                                 else "|".join(format(float(x), ".17g") for x in v)
                                 for v in value)
            elif isinstance(value, float):
                value = format(value, ".17g")
            lines.append(f"{key},{value}")
        text = "\n".join(lines) + "\n"
    else:
        text = to_json(payload) + "\n"
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_eval(args):
    x, y = _vector(args.x), _vector(args.y)
    spec = _spec_from_args(args, dim=len(x))
    if args.scale is not None:
        value = scaled_conformal_div(spec, x, y, args.scale)
    else:
        value = conformal_div(spec, x, y)
    _emit(args, {"value": float(value)})


def cmd_leftmin(args):
    sample = load_sample(args.points)
    spec = _spec_from_args(args, dim=sample.dim)
    if args.scales:
        result = scaled_left_minimizer(spec.generator, spec.weight, sample, _vector(args.scales),
                                       structure=spec.structure)
    else:
        result = left_minimizer(spec.geometry, spec.weight, sample)
    _emit(args, result.to_dict())


def cmd_rightmin(args):
    sample = load_sample(args.points)
    spec = _spec_from_args(args, dim=sample.dim)
    if args.method == "bracket":
        result = right_minimizer_1d(spec.generator, spec.weight, sample, tol=args.root_tol)
    elif args.method == "qnorm":
        result = right_minimizer_nd(spec.geometry, spec.weight, sample, args.k, tol=args.orth_tol)
    else:
        result = right_minimizer(spec.geometry, spec.weight, sample, args.k,
                                 root_tol=args.root_tol, orth_tol=args.orth_tol)
    _emit(args, result.to_dict())


def cmd_cluster(args):
    sample = load_sample(args.points)
    spec = _spec_from_args(args, dim=sample.dim)
    model = clustering.fit(sample, args.k, spec, args.side, args.seed, args.max_iter)
    _emit(args, model.to_dict())


def cmd_robustness(args):
    config = json.loads(Path(args.config).read_text())
    workers = int(os.environ.get("CONFDIV_THREADS", "1") or 1)
    rows = robustness_sweep(config, workers=workers)
    if args.format == "json":
        text = to_json(rows) + "\n"
    else:
        text = rows_to_csv(rows)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_symmetry_scan(args):
    spec = _spec_from_args(args, dim=args.dim)
    geom = spec.geometry
    lo, hi = finite_interval(max(geom.lower, geom.phi.lower), min(geom.upper, geom.phi.upper))
    rng = np.random.default_rng(args.seed)
    defects = np.array([
        symmetry_defect(spec, rng.uniform(lo, hi, args.dim), rng.uniform(lo, hi, args.dim))
        for _ in range(args.pairs)
    ])
    _emit(args, {"pairs": int(args.pairs), "max_defect": float(defects.max()),
                 "min_defect": float(defects.min()), "mean_defect": float(defects.mean())})


def cmd_validate_structure(args):
    if args.config:
        entries = json.loads(Path(args.config).read_text())
        if isinstance(entries, dict):
            entries = [entries]
    else:
        entries = [{"u": args.u, "v": args.v, "phi": args.gen}]
    report = []
    for entry in entries:
        s = make_structure(entry["u"], entry["v"], entry["phi"], dim=entry.get("dim"), tol=args.tol)
        worst = max(s.relation_residual(p) for p in s.probes())
        report.append({"u": entry["u"], "v": entry["v"], "phi": entry["phi"], "valid": True,
                       "max_residual": float(worst)})
    _emit(args, report[0] if len(report) == 1 else {"structures": report})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confdiv", description="Conformal divergence toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["json", "csv"], default="json")
    common.add_argument("--out", help="write the result atomically to this path")

    div = argparse.ArgumentParser(add_help=False)
    div.add_argument("--gen", required=True, help="generator id, e.g. square or power:3")
    div.add_argument("--weight", default="const:1", help="const:K, gbot:K, gp:K:p, composed-u:K")
    div.add_argument("--structure", default=None, help="'<u-id>,<v-id>'; default grad,identity")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", parents=[common, div], help="evaluate D(x : y)")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--scale", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("leftmin", parents=[common, div], help="left population minimizer")
    p.add_argument("--points", required=True)
    p.add_argument("--scales", default=None, help="per-point scales for the perspective form")
    p.set_defaults(func=cmd_leftmin)

    p = sub.add_parser("rightmin", parents=[common, div], help="right population minimizer")
    p.add_argument("--points", required=True)
    p.add_argument("--k", type=int, default=None, help="norm order q = 2k")
    p.add_argument("--method", choices=["auto", "bracket", "qnorm"], default="auto")
    p.add_argument("--root-tol", type=float, default=ROOT_TOL, help="relative root residual (bracket path)")
    p.add_argument("--orth-tol", type=float, default=ORTH_TOL, help="orthogonality residual (q-norm path)")
    p.set_defaults(func=cmd_rightmin)

    p = sub.add_parser("cluster", parents=[common, div], help="hard clustering")
    p.add_argument("--points", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--side", choices=["left", "right"], default="left")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=100)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("robustness", help="outlier sweep to CSV")
    p.add_argument("--format", choices=["json", "csv"], default="csv")
    p.add_argument("--out", help="write the result atomically to this path")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("symmetry-scan", parents=[common, div], help="max |D(x:y) - D(y:x)|")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=1)
    p.set_defaults(func=cmd_symmetry_scan)

    p = sub.add_parser("validate-structure", parents=[common], help="check u = grad(phi) o v")
    p.add_argument("--u")
    p.add_argument("--v")
    p.add_argument("--gen")
    p.add_argument("--config")
    p.add_argument("--tol", type=float, default=RELATION_TOL, help="max relative probe residual")
    p.set_defaults(func=cmd_validate_structure)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NoConvergence as exc:
        diag = {"error": "NoConvergence", "message": str(exc)}
        if exc.best is not None and hasattr(exc.best, "to_dict"):
            diag["best"] = exc.best.to_dict()
        sys.stderr.write(to_json(diag) + "\n")
        return EXIT_SOLVER
    except (ConfDivError, ValueError, KeyError, OSError) as exc:
        sys.stderr.write(to_json({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
