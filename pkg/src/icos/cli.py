"""Command-line entry point: ``icos {bench-rotation,bench-registration,bench-scale,solve,synth}``.

Exit codes: 0 success, 2 configuration error, 3 I/O or format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .exceptions import InvalidParameter, UnsupportedFormat
from .geometry import CorrespondenceKind, CorrespondenceSet, matrix_to_quaternion
from .synthio import dump_instance, gen_registration_instance, gen_rotation_instance, load_instance, load_matches, load_ply

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _scale(values):
    """``fixed`` (scale 1) or ``range LO HI`` into a generator scale argument."""
    if not values:
        return None
    mode, rest = values[0], values[1:]
    try:
        nums = [float(v) for v in rest]
    except ValueError as exc:
        raise ConfigError(f"bad --scale values {rest}") from exc
    if mode == "fixed" and not nums:
        return None
    if mode == "range" and len(nums) == 2:
        lo, hi = nums
        if not 0 < lo <= hi:
            raise ConfigError("--scale range needs 0 < LO <= HI")
        return (lo, hi)
    raise ConfigError("--scale takes 'fixed' or 'range LO HI'")


def _add_common(p, n_default, scale_default):
    p.add_argument("--n", type=int, default=n_default, help="correspondences per instance")
    p.add_argument("--sigma", type=float, default=0.01, help="inlier noise standard deviation")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--scale", nargs="+", default=scale_default, metavar="MODE", help="fixed | range LO HI")
    p.add_argument("--out", default=None, help="output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="icos", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    specs = {
        "bench-rotation": ("rotation search benchmark", 1000, None, 1.0, None, None),
        "bench-registration": ("registration benchmark (fixed scale: known-scale solver)", 1000, None, 1.0, None, None),
        "bench-scale": ("unknown-scale benchmark scored on scale error", 100, ["range", "1", "5"], None, None, 0.05),
    }
    for name, (help_, n, scale, er, et, es) in specs.items():
        p = sub.add_parser(name, help=help_)
        _add_common(p, n, scale)
        p.add_argument("--outlier-ratios", default="0:0.1:0.9", help="start:step:stop or comma list")
        p.add_argument("--runs", type=int, default=50)
        p.add_argument("--solvers", default="icos", help="comma list of icos, ransac-K, ransac-Ns")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--success-er", type=float, default=er, help="success: E_R below this (degrees)")
        p.add_argument("--success-et", type=float, default=et, help="success: E_t below this")
        p.add_argument("--success-es", type=float, default=es, help="success: E_s below this")

    p = sub.add_parser("solve", help="run one solver on an instance dump or PLY pair plus matches")
    p.add_argument("--instance", help="JSON instance dump")
    p.add_argument("--src", help="source PLY")
    p.add_argument("--dst", help="target PLY")
    p.add_argument("--matches", help="text file of 'i j' index pairs")
    p.add_argument("--problem", choices=bench.PROBLEMS, help="default: from the dump, else unknown-scale")
    p.add_argument("--solver", default="icos")
    p.add_argument("--sigma", type=float, help="noise level (default: from the dump, else 0.01)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("synth", help="write a synthetic instance dump")
    _add_common(p, 1000, None)
    p.add_argument("--problem", choices=bench.PROBLEMS, default="rotation")
    p.add_argument("--outlier-ratio", type=float, default=0.0)
    p.add_argument("--source", help="PLY cloud to sample registration sources from")
    return parser


# --------------------------------------------------------------------------
# commands


def _write(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _bench(args) -> int:
    problem = "rotation"
    scale = _scale(args.scale)
    if args.command == "bench-registration":
        problem = "unknown-scale" if isinstance(scale, tuple) else "known-scale"
    elif args.command == "bench-scale":
        if not isinstance(scale, tuple):
            raise ConfigError("bench-scale needs --scale range LO HI")
        problem = "unknown-scale"
    elif scale is not None:
        raise ConfigError("bench-rotation takes no --scale")
    icos_over, ransac_over = bench.parse_overrides(args.override)
    cfg = bench.RunConfig(
        problem=problem,
        n=args.n,
        sigma=args.sigma,
        ratios=tuple(bench.parse_ratios(args.outlier_ratios)),
        runs=args.runs,
        seed=args.seed,
        solvers=tuple(s.strip() for s in args.solvers.split(",") if s.strip()),
        scale_range=scale,
        icos_overrides=icos_over,
        ransac_overrides=ransac_over,
        success_rotation=args.success_er,
        success_translation=args.success_et,
        success_scale=args.success_es,
    )
    workers = bench.thread_count()
    rows = bench.run_benchmark(cfg, workers)
    summary = bench.aggregate(rows, cfg)
    if args.format == "json":
        _write(bench.results_to_json(rows, summary, cfg), args.out)
    else:
        _write(bench.rows_to_csv(rows), args.out)
        if args.out is None:
            sys.stderr.write(bench.summary_to_csv(summary))
        else:
            out = Path(args.out)
            out.with_name(out.stem + "_summary" + out.suffix).write_text(bench.summary_to_csv(summary))
    return EXIT_OK


def report_to_dict(report) -> dict:
    """JSON-ready view of a :class:`~icos.samplers.SolveReport`."""
    r = np.asarray(report.rotation, dtype=float)
    return {
        "status": report.status.value,
        "rotation": r.tolist(),
        "quaternion": matrix_to_quaternion(r).tolist(),
        "translation": np.asarray(report.translation, dtype=float).tolist(),
        "scale": float(report.scale),
        "inliers": [int(i) for i in report.inliers],
        "iterations": {k: int(v) for k, v in report.iterations.items()},
        "restarts": int(report.restarts),
    }


def _load_input(args):
    """``(cset, problem, sigma)`` from a dump or from PLY files plus matches."""
    if args.instance:
        if args.src or args.dst or args.matches:
            raise ConfigError("give either --instance or --src/--dst/--matches")
        cset, truth = load_instance(args.instance)
        if cset.kind is CorrespondenceKind.VECTORS:
            default = "rotation"
        else:
            default = "known-scale" if truth.known_scale else "unknown-scale"
        return cset, args.problem or default, args.sigma if args.sigma is not None else truth.sigma
    if not (args.src and args.dst and args.matches):
        raise ConfigError("solve needs --instance, or all of --src, --dst and --matches")
    src, dst, pairs = load_ply(args.src), load_ply(args.dst), load_matches(args.matches)
    if len(pairs) == 0:
        raise UnsupportedFormat(f"{args.matches}: no correspondences")
    if pairs.min() < 0 or pairs[:, 0].max() >= len(src) or pairs[:, 1].max() >= len(dst):
        raise UnsupportedFormat(f"{args.matches}: index out of range")
    problem = args.problem or "unknown-scale"
    kind = CorrespondenceKind.VECTORS if problem == "rotation" else CorrespondenceKind.POINTS
    cset = CorrespondenceSet(src[pairs[:, 0]], dst[pairs[:, 1]], kind)
    return cset, problem, args.sigma if args.sigma is not None else 0.01


def _solve(args) -> int:
    bench.parse_solver(args.solver)
    cset, problem, sigma = _load_input(args)
    icos_over, ransac_over = bench.parse_overrides(args.override)
    cfg = bench.RunConfig(
        problem=problem,
        n=len(cset),
        sigma=sigma,
        seed=args.seed,
        solvers=(args.solver,),
        scale_range=(1.0, 1.0) if problem == "unknown-scale" else None,
        icos_overrides=icos_over,
        ransac_overrides=ransac_over,
    )
    report = bench.run_solver(args.solver, cset, cfg, args.seed)
    sys.stdout.write(json.dumps(report_to_dict(report), indent=1) + "\n")
    return EXIT_OK


def _synth(args) -> int:
    if args.problem == "rotation":
        if args.scale is not None or args.source:
            raise ConfigError("rotation instances take no --scale or --source")
        cset, truth = gen_rotation_instance(args.n, args.sigma, args.outlier_ratio, args.seed)
    else:
        scale = _scale(args.scale)
        if (args.problem == "unknown-scale") != isinstance(scale, tuple):
            raise ConfigError("unknown-scale needs --scale range LO HI; known-scale needs a fixed scale")
        source = load_ply(args.source) if args.source else None
        cset, truth = gen_registration_instance(args.n, args.sigma, args.outlier_ratio, scale, args.seed, source)
    _write(json.dumps(dump_instance(cset, truth)) + "\n", args.out)
    return EXIT_OK


_COMMANDS = {"solve": _solve, "synth": _synth}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS.get(args.command, _bench)(args)
    except (ConfigError, InvalidParameter) as exc:
        print(f"icos: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedFormat as exc:
        print(f"icos: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"icos: error: cannot access {name!s}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
