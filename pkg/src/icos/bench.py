"""Monte-Carlo benchmark harness.

Every (ratio index, run index) cell draws its seeds from
``SeedSequence(master_seed, spawn_key=(ratio_index, run_index))``: the first
64-bit word seeds the instance generator, the second seeds the solvers.
A cell can therefore be re-run alone. All solvers in a cell see the same
instance object, and rows come out in (ratio, run, solver) order whatever
the completion order of parallel cells.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import re
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baseline import RansacParams, ransac_registration, ransac_rotation
from .exceptions import InvalidParameter
from .invariants import TABLE_MULTIPLIERS, NoiseBounds
from .samplers import IcosParams, icos_registration, icos_rotation_search
from .synthio import BENCH_SCHEMA_VERSION, BenchRecord, gen_registration_instance, gen_rotation_instance, metrics

PROBLEMS = ("rotation", "known-scale", "unknown-scale")
MAX_RATIO = 0.99
THREADS_ENV = "ICOS_THREADS"

_ICOS_KEYS = {
    "X": int, "max_itr1": int, "max_itr2": int, "max_itr3": int, "max_itr4": int,
    "confidence": float, "assumed_outlier_ratio": float, "max_restarts": int,
    "use_budget_formula": bool, "refine_passes": int,
    **{k: float for k in TABLE_MULTIPLIERS},
}
_RANSAC_KEYS = {"confidence": float, "inlier_threshold": float}
_SOLVER_RE = re.compile(r"^(icos|ransac-(\d+)|ransac-(\d+(?:\.\d+)?)s)$")


# --------------------------------------------------------------------------
# configuration


def parse_ratios(text: str) -> list:
    """``start:step:stop`` (stop inclusive) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(x) for x in text.split(":")]
            if len(parts) != 3:
                raise InvalidParameter(f"ratio sweep must be start:step:stop, got {text!r}")
            start, step, stop = parts
            if step <= 0 or stop < start:
                raise InvalidParameter(f"empty ratio sweep {text!r}")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            ratios = [round(start + k * step, 10) for k in range(count)]
        else:
            ratios = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InvalidParameter(f"bad outlier ratios {text!r}") from exc
    if not ratios:
        raise InvalidParameter("no outlier ratios given")
    for r in ratios:
        if not 0.0 <= r <= MAX_RATIO:
            raise InvalidParameter(f"outlier ratio {r} outside [0, {MAX_RATIO}]")
    return ratios


def _parse_value(raw: str, kind):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    return kind(raw)


def parse_overrides(items: Sequence[str]) -> tuple:
    """``key=value`` strings into ``(icos, ransac)`` override dicts.

    Keys may be qualified as ``icos.KEY`` or ``ransac.KEY``; a bare key goes to
    every solver family that knows it. Bound names ``L`` .. ``D`` set the
    multiplier applied to sigma.
    """
    icos, ransac = {}, {}
    for item in items or ():
        if "=" not in item:
            raise InvalidParameter(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        scope, _, name = key.strip().rpartition(".")
        targets = []
        if scope in ("", "icos") and name in _ICOS_KEYS:
            targets.append((icos, _ICOS_KEYS[name]))
        if scope in ("", "ransac") and name in _RANSAC_KEYS:
            targets.append((ransac, _RANSAC_KEYS[name]))
        if not targets or scope not in ("", "icos", "ransac"):
            raise InvalidParameter(f"unknown override key {key!r}")
        for d, kind in targets:
            try:
                d[name] = _parse_value(raw, kind)
            except ValueError as exc:
                raise InvalidParameter(f"bad value for {key!r}: {raw!r}") from exc
    return icos, ransac


def parse_solver(name: str) -> tuple:
    """``icos``, ``ransac-K`` (K iterations) or ``ransac-Ts`` (T seconds)."""
    m = _SOLVER_RE.match(name.strip().lower())
    if not m:
        raise InvalidParameter(f"unknown solver {name!r} (expected icos, ransac-K or ransac-Ns)")
    if m.group(1) == "icos":
        return ("icos", None)
    if m.group(2):
        k = int(m.group(2))
        if k < 1:
            raise InvalidParameter("ransac iteration count must be >= 1")
        return ("ransac", {"max_iterations": k, "time_budget": None})
    return ("ransac", {"max_iterations": None, "time_budget": float(m.group(3))})


@dataclass(frozen=True)
class RunConfig:
    problem: str
    n: int = 1000
    sigma: float = 0.01
    ratios: tuple = (0.0,)
    runs: int = 50
    seed: int = 0
    solvers: tuple = ("icos",)
    scale_range: Optional[tuple] = None
    icos_overrides: dict = field(default_factory=dict)
    ransac_overrides: dict = field(default_factory=dict)
    success_rotation: Optional[float] = 1.0
    success_translation: Optional[float] = None
    success_scale: Optional[float] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise InvalidParameter(f"problem must be one of {PROBLEMS}")
        if self.runs < 1:
            raise InvalidParameter("runs must be >= 1")
        if self.n < 3:
            raise InvalidParameter("n must be >= 3")
        if not self.sigma >= 0:
            raise InvalidParameter("sigma must be non-negative")
        if not self.ratios:
            raise InvalidParameter("no outlier ratios given")
        for r in self.ratios:
            if not 0.0 <= r <= MAX_RATIO:
                raise InvalidParameter(f"outlier ratio {r} outside [0, {MAX_RATIO}]")
        for s in self.solvers:
            parse_solver(s)
        if (self.problem == "unknown-scale") != (self.scale_range is not None and not np.isscalar(self.scale_range)):
            raise InvalidParameter("unknown-scale needs a scale range; other problems use a fixed scale")
        # fail early on bad override values
        _icos_params(self, 0)
        RansacParams(self.sigma, **self.ransac_overrides)


def _icos_params(cfg: RunConfig, seed: int) -> IcosParams:
    over = dict(cfg.icos_overrides)
    mult = {k: over.pop(k) for k in list(over) if k in TABLE_MULTIPLIERS}
    if cfg.problem == "rotation":
        params = IcosParams.for_rotation_search(cfg.sigma, cfg.n, seed=seed, **over)
    else:
        params = IcosParams.for_registration(cfg.sigma, seed=seed, **over)
    if mult:
        params = params.with_overrides(bounds=NoiseBounds.from_sigma(cfg.sigma, **mult))
    return params


# --------------------------------------------------------------------------
# running


def cell_seeds(master_seed: int, ratio_index: int, run_index: int) -> tuple:
    """``(instance_seed, solver_seed)`` for one cell."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(ratio_index, run_index))
    a, b = ss.generate_state(2, dtype=np.uint64)
    return int(a), int(b)


def make_instance(cfg: RunConfig, ratio: float, seed: int):
    if cfg.problem == "rotation":
        return gen_rotation_instance(cfg.n, cfg.sigma, ratio, seed)
    return gen_registration_instance(cfg.n, cfg.sigma, ratio, cfg.scale_range, seed)


def run_solver(name: str, cset, cfg: RunConfig, seed: int):
    family, extra = parse_solver(name)
    if family == "icos":
        params = _icos_params(cfg, seed)
        if cfg.problem == "rotation":
            return icos_rotation_search(cset, params)
        return icos_registration(cset, params, known_scale=cfg.problem == "known-scale")
    params = RansacParams(sigma=cfg.sigma, seed=seed, **{**cfg.ransac_overrides, **extra})
    if cfg.problem == "rotation":
        return ransac_rotation(cset, params)
    return ransac_registration(cset, params, known_scale=cfg.problem == "known-scale")


def run_cell(cfg: RunConfig, ratio_index: int, run_index: int) -> list:
    """All solvers on the one instance of a cell."""
    ratio = cfg.ratios[ratio_index]
    inst_seed, solver_seed = cell_seeds(cfg.seed, ratio_index, run_index)
    cset, truth = make_instance(cfg, ratio, inst_seed)
    rows = []
    for name in cfg.solvers:
        t0 = time.perf_counter()
        report = run_solver(name, cset, cfg, solver_seed)
        runtime = time.perf_counter() - t0
        m = metrics(report, truth)
        rows.append(
            BenchRecord(
                problem=cfg.problem,
                n=cfg.n,
                sigma=cfg.sigma,
                outlier_ratio=ratio,
                ratio_index=ratio_index,
                run=run_index,
                seed=inst_seed,
                solver=name,
                E_R=min(m["E_R"], 180.0),
                E_t=m["E_t"],
                E_s=m["E_s"],
                recall=m["recall"],
                precision=m["precision"],
                runtime=runtime,
                status=report.status.value,
                iterations=int(sum(report.iterations.values())),
            )
        )
    return rows


def _cell_job(args):
    return run_cell(*args)


def thread_count(env=None) -> int:
    """Worker processes: ``ICOS_THREADS`` if set, else the CPU count."""
    env = os.environ if env is None else env
    raw = env.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return max(1, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError as exc:
        raise InvalidParameter(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if value < 1:
        raise InvalidParameter(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def run_benchmark(cfg: RunConfig, workers: Optional[int] = None) -> list:
    """Rows for every solver x ratio x run, in (ratio, run, solver) order."""
    cells = [(cfg, i, r) for i in range(len(cfg.ratios)) for r in range(cfg.runs)]
    workers = min(thread_count() if workers is None else workers, len(cells))
    if workers <= 1:
        chunks = [run_cell(*c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_cell_job, cells))
    return [row for chunk in chunks for row in chunk]


# --------------------------------------------------------------------------
# aggregation and output

_ERROR_FIELDS = ("E_R", "E_t", "E_s", "recall", "precision", "runtime")


def is_success(row: BenchRecord, cfg: RunConfig) -> bool:
    ok = True
    if cfg.success_rotation is not None:
        ok &= row.E_R < cfg.success_rotation
    if cfg.success_translation is not None:
        ok &= row.E_t < cfg.success_translation
    if cfg.success_scale is not None:
        ok &= row.E_s < cfg.success_scale
    return bool(ok)


def aggregate(rows: Sequence[BenchRecord], cfg: RunConfig) -> list:
    """Per (solver, ratio) mean and median of each error, success and convergence rates.

    Groups are listed in ratio then solver order, independent of row order.
    """
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.ratio_index, cfg.solvers.index(row.solver)), []).append(row)
    out = []
    for (ri, si) in sorted(groups):
        g = sorted(groups[(ri, si)], key=lambda r: r.run)
        entry = {
            "schema_version": BENCH_SCHEMA_VERSION,
            "problem": cfg.problem,
            "solver": cfg.solvers[si],
            "outlier_ratio": cfg.ratios[ri],
            "runs": len(g),
            "success_rate": sum(is_success(r, cfg) for r in g) / len(g),
            "converged_rate": sum(r.status == "converged" for r in g) / len(g),
        }
        for f in _ERROR_FIELDS:
            vals = [getattr(r, f) for r in g]
            entry[f"mean_{f}"] = statistics.fmean(vals)
            entry[f"median_{f}"] = statistics.median(vals)
        out.append(entry)
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(dicts: Sequence[dict]) -> str:
    buf = io.StringIO()
    if dicts:
        cols = list(dicts[0])
        cols = ["schema_version"] + [c for c in cols if c != "schema_version"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for d in dicts:
            w.writerow([_fmt(d[c]) for c in cols])
    return buf.getvalue()


def rows_to_csv(rows: Sequence[BenchRecord]) -> str:
    return _csv_text([dataclasses.asdict(r) for r in rows])


def summary_to_csv(summary: Sequence[dict]) -> str:
    return _csv_text(summary)


def results_to_json(rows: Sequence[BenchRecord], summary: Sequence[dict], cfg: RunConfig) -> str:
    doc = {
        "schema_version": BENCH_SCHEMA_VERSION,
        "config": {
            "problem": cfg.problem,
            "n": cfg.n,
            "sigma": cfg.sigma,
            "ratios": list(cfg.ratios),
            "runs": cfg.runs,
            "seed": cfg.seed,
            "solvers": list(cfg.solvers),
            "scale_range": None if cfg.scale_range is None else list(np.atleast_1d(cfg.scale_range)),
            "icos_overrides": cfg.icos_overrides,
            "ransac_overrides": cfg.ransac_overrides,
        },
        "records": [dataclasses.asdict(r) for r in rows],
        "aggregates": list(summary),
    }
    return json.dumps(doc, indent=1) + "\n"
