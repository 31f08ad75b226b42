"""Invariant-constrained sampling solvers.

Three frameworks share one skeleton: find a seed structure (a 2-COS for
rotation search, a 3-COS for registration), then draw single
correspondences and keep those that extend it to an eligible larger
structure until ``X`` distinct ones are collected. The collected set gives a
provisional estimate; every correspondence within ``5.2 sigma`` of it is
then classified as an inlier and the estimate is re-solved. That expansion
runs ``refine_passes`` times (default 2), each pass classifying against the
previous pass's estimate.

Random draws are made in fixed-size chunks and their checks evaluated in a
vectorized pass, then consumed in draw order, so the outcome is the same
as a one-at-a-time loop over the same random stream. Draws past the point
where a stage stops are discarded. All randomness comes from
``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

import enum
import math
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .exceptions import DegenerateConfiguration, InvalidParameter
from .geometry import (
    CorrespondenceKind,
    CorrespondenceSet,
    SimilarityTransform,
    horn_pair_rotation_batch,
    solve_rotation_nonminimal,
    solve_transform_nonminimal,
)
from .invariants import (
    NoiseBounds,
    Rejected,
    four_cos_mask,
    known_scale_pair_mask,
    length_invariant_batch,
    residuals,
    scale_triplet_mask,
    three_cos_from_points,
    three_cos_rotation_mask,
    unit_rows,
)

# Stage-1 draws evaluated per vectorized batch.
STAGE1_CHUNK = 256
# Rotation-search X by problem size.
ROTATION_X_TABLE = {100: 2, 500: 4, 1000: 5}


class Status(str, enum.Enum):
    CONVERGED = "converged"
    BUDGET_EXHAUSTED = "budget_exhausted"


class SamplingDecision(str, enum.Enum):
    CONTINUE = "continue"
    ABORT = "abort"


def max_iterations(x: int, p: float, outlier_ratio: float, n: int) -> int:
    """Draws needed to see ``x`` all-inlier subsets of size ``n`` with confidence ``p``.

    ``ceil(x * log(1 - p) / log(1 - (1 - outlier_ratio) ** n))``; with no
    outliers every draw is an inlier subset and ``x`` is returned.
    """
    if x < 1 or n < 1 or not 0 < p < 1 or not 0 <= outlier_ratio < 1:
        raise InvalidParameter(f"invalid budget parameters x={x}, p={p}, ratio={outlier_ratio}, n={n}")
    if outlier_ratio == 0:
        return int(x)
    good = (1.0 - outlier_ratio) ** n
    if good >= 1.0:
        return int(x)
    value = x * math.log1p(-p) / math.log1p(-good)
    return max(int(x), math.ceil(value - 1e-9))


def check_sampling(itr3: int, count: int, max_itr4: int) -> SamplingDecision:
    """Early abort when too few structures were found after 1, 2 or 3 windows of ``max_itr4`` draws."""
    for m in (1, 2, 3):
        if itr3 >= m * max_itr4 and count < m:
            return SamplingDecision.ABORT
    return SamplingDecision.CONTINUE


@dataclass(frozen=True)
class IcosParams:
    """Solver configuration. Use :meth:`for_rotation_search` / :meth:`for_registration`
    for the published defaults."""

    bounds: NoiseBounds
    X: int = 4
    max_itr1: int = 40000
    max_itr2: int = 400
    max_itr3: int = 1600
    max_itr4: int = 400
    confidence: float = 0.99
    assumed_outlier_ratio: float = 0.99
    seed: Optional[int] = 0
    max_restarts: int = 100000
    use_budget_formula: bool = False
    refine_passes: int = 2

    def __post_init__(self):
        for name in ("X", "max_itr1", "max_itr2", "max_itr3", "max_itr4", "max_restarts", "refine_passes"):
            if int(getattr(self, name)) < 1:
                raise InvalidParameter(f"{name} must be >= 1")
        if not 0 < self.confidence < 1:
            raise InvalidParameter("confidence must lie in (0, 1)")
        if not 0 <= self.assumed_outlier_ratio < 1:
            raise InvalidParameter("assumed_outlier_ratio must lie in [0, 1)")

    @classmethod
    def for_rotation_search(cls, sigma: float, n: int = 1000, **overrides) -> "IcosParams":
        # nearest documented problem size; ties go to the larger size
        key = min(ROTATION_X_TABLE, key=lambda k: (abs(k - n), -k))
        base = dict(bounds=NoiseBounds.from_sigma(sigma), X=ROTATION_X_TABLE[key], max_itr3=2000)
        return cls(**{**base, **overrides})

    @classmethod
    def for_registration(cls, sigma: float, **overrides) -> "IcosParams":
        base = dict(bounds=NoiseBounds.from_sigma(sigma), X=4, max_itr3=1600)
        return cls(**{**base, **overrides})

    def with_overrides(self, **kw) -> "IcosParams":
        return replace(self, **kw)

    def budgets(self, seed_size: int) -> dict:
        """Iteration caps; from the budget formula when ``use_budget_formula`` is set."""
        if not self.use_budget_formula:
            return dict(itr1=self.max_itr1, itr2=self.max_itr2, itr3=self.max_itr3, itr4=self.max_itr4)
        p, r = self.confidence, self.assumed_outlier_ratio
        return dict(
            itr1=max_iterations(1, p, r, seed_size),
            itr2=max_iterations(1, p, r, 1),
            itr3=max_iterations(self.X, p, r, 1),
            itr4=max_iterations(1, p, r, 1),
        )


Estimate = Union[np.ndarray, SimilarityTransform]


@dataclass
class SolveReport:
    estimate: Estimate
    inliers: np.ndarray
    status: Status
    iterations: dict = field(default_factory=dict)
    restarts: int = 0
    elapsed: float = 0.0
    rejections: Counter = field(default_factory=Counter)
    seed_structure: tuple = ()
    collected: tuple = ()

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def rotation(self) -> np.ndarray:
        return self.estimate.rotation if isinstance(self.estimate, SimilarityTransform) else self.estimate

    @property
    def scale(self) -> float:
        return self.estimate.scale if isinstance(self.estimate, SimilarityTransform) else 1.0

    @property
    def translation(self) -> np.ndarray:
        if isinstance(self.estimate, SimilarityTransform):
            return self.estimate.translation
        return np.zeros(3)


# --------------------------------------------------------------------------
# sampling primitives


def draw_pairs(rng: np.random.Generator, n: int, m: int):
    """``m`` independent index pairs, distinct within each pair."""
    i = rng.integers(0, n, m)
    j = rng.integers(0, n - 1, m)
    j += j >= i
    return i, j


def draw_triples(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    i, j = draw_pairs(rng, n, m)
    k = rng.integers(0, n - 2, m)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    k += k >= lo
    k += k >= hi
    return np.stack([i, j, k], axis=1)


def draw_singles(rng: np.random.Generator, n: int, exclude, m: int) -> np.ndarray:
    """``m`` independent uniform indices from ``range(n)`` minus ``exclude``."""
    ex = sorted(set(int(e) for e in exclude))
    k = rng.integers(0, n - len(ex), m)
    for e in ex:
        k += k >= e
    return k


def _first_passing(rng, budget, draw, mask_fn):
    """Draw in chunks until ``mask_fn`` accepts one; returns ``(draw or None, draws used)``."""
    used = 0
    while used < budget:
        m = min(STAGE1_CHUNK, budget - used)
        batch = draw(m)
        ok = mask_fn(batch)
        hit = np.flatnonzero(ok)
        if hit.size:
            h = int(hit[0])
            pick = tuple(int(a[h]) for a in batch) if isinstance(batch, tuple) else tuple(int(x) for x in batch[h])
            return pick, used + h + 1
        used += m
    return None, used


def _collect(rng, n, cos, mask_fn, x_needed, max_itr3, max_itr4, on_accept=None):
    """Single-correspondence extension stage guarded by :func:`check_sampling`.

    Returns ``(collected, reached, iterations)``; ``collected`` keeps
    admission order and holds each index once.
    """
    collected: list = []
    seen: set = set()
    itr3 = 1
    while itr3 <= max_itr3:
        if check_sampling(itr3, len(collected), max_itr4) is SamplingDecision.ABORT:
            return collected, False, itr3 - 1
        end = min(max_itr3, (itr3 // max_itr4 + 1) * max_itr4 - 1)
        ks = draw_singles(rng, n, cos, end - itr3 + 1)
        for pos in np.flatnonzero(mask_fn(ks)):
            k = int(ks[pos])
            if on_accept is not None:
                on_accept(k)
            if k not in seen:
                seen.add(k)
                collected.append(k)
                if len(collected) >= x_needed:
                    return collected, True, itr3 + int(pos)
        itr3 = end + 1
    return collected, False, max_itr3


# --------------------------------------------------------------------------
# refinement


def expand_and_refine(cset: CorrespondenceSet, provisional: Estimate, sigma: float, known_scale=None):
    """Classify all correspondences by residual <= 5.2 sigma and re-solve on them.

    Single pass: the returned inlier set is the threshold set under
    ``provisional``. Raises :class:`DegenerateConfiguration` when too few
    correspondences survive.
    """
    thr = NoiseBounds.from_sigma(sigma).inlier_threshold
    inliers = np.flatnonzero(residuals(cset, provisional) <= thr)
    if isinstance(provisional, SimilarityTransform):
        est = solve_transform_nonminimal(cset, inliers, known_scale)
    else:
        est = solve_rotation_nonminimal(cset, inliers)
    return est, inliers


def _solve(cset, subset, known_scale):
    if cset.kind is CorrespondenceKind.VECTORS:
        return solve_rotation_nonminimal(cset, subset)
    return solve_transform_nonminimal(cset, subset, known_scale)


def _finish(cset, params, seed, collected, known_scale, base):
    subset = list(seed) + list(collected)
    est = _solve(cset, subset, known_scale)
    for _ in range(params.refine_passes):
        est, inliers = expand_and_refine(cset, est, params.bounds.sigma, known_scale)
    return SolveReport(
        estimate=est,
        inliers=inliers,
        status=Status.CONVERGED,
        seed_structure=tuple(seed),
        collected=tuple(collected),
        **base,
    )


def _exhausted(cset, best, known_scale, base):
    """Best-effort report from the largest partial structure, or identity."""
    minimal = 2 if cset.kind is CorrespondenceKind.VECTORS else 3
    if cset.kind is CorrespondenceKind.VECTORS:
        est = np.eye(3)
    else:
        est = SimilarityTransform.identity()
    inliers = np.array([], dtype=int)
    if len(best) >= minimal:
        try:
            est = _solve(cset, list(best), known_scale)
            inliers = np.array(sorted(best), dtype=int)
        except DegenerateConfiguration:
            pass
    return SolveReport(estimate=est, inliers=inliers, status=Status.BUDGET_EXHAUSTED, **base)


class _Run:
    """Bookkeeping shared by the three frameworks."""

    def __init__(self, params: IcosParams, trace: Optional[list]):
        self.t0 = time.perf_counter()
        self.params = params
        self.rng = np.random.default_rng(params.seed)
        self.iterations = Counter(itr1=0, itr2=0, itr3=0)
        self.rejections: Counter = Counter()
        self.trace = trace
        self.best: tuple = ()
        self.restarts = 0

    def record(self, kind, indices):
        if self.trace is not None:
            self.trace.append((kind, tuple(int(i) for i in indices)))

    def partial(self, structure):
        if len(structure) > len(self.best):
            self.best = tuple(structure)

    def base(self):
        return dict(
            iterations=dict(self.iterations),
            restarts=self.restarts,
            elapsed=time.perf_counter() - self.t0,
            rejections=self.rejections,
        )


def _require(cset, kind, minimum):
    if cset.kind is not kind:
        raise InvalidParameter(f"expected {kind.value} correspondences, got {cset.kind.value}")
    if len(cset) < minimum:
        raise InvalidParameter(f"need at least {minimum} correspondences, got {len(cset)}")


# --------------------------------------------------------------------------
# frameworks


def icos_rotation_search(cset: CorrespondenceSet, params: IcosParams, trace: Optional[list] = None) -> SolveReport:
    """Robust rotation from vector correspondences.

    Parameters
    ----------
    cset : CorrespondenceSet
        Vector pairs ``(u_i, v_i)`` with ``v_i ~ R u_i``.
    params : IcosParams
    trace : list, optional
        If given, receives ``("2cos", (i, j))`` for every accepted seed pair
        and ``("3cos", (i, j, k))`` for every accepted extension draw.

    Returns
    -------
    SolveReport
        ``estimate`` is a ``(3, 3)`` rotation matrix.
    """
    _require(cset, CorrespondenceKind.VECTORS, params.X + 2)
    n = len(cset)
    bounds = params.bounds
    budget = params.budgets(2)
    run = _Run(params, trace)
    uh, vh = unit_rows(cset.src), unit_rows(cset.dst)

    def pair_ok(batch):
        i, j = batch
        ok = length_invariant_batch(uh[i], vh[i], uh[j], vh[j]) <= bounds.L
        sel = np.flatnonzero(ok)
        if sel.size:
            _, nondeg = horn_pair_rotation_batch(uh[i[sel]], vh[i[sel]], uh[j[sel]], vh[j[sel]])
            ok[sel[~nondeg]] = False
        return ok

    for restart in range(params.max_restarts):
        run.restarts = restart
        pair, used = _first_passing(run.rng, budget["itr1"], lambda m: draw_pairs(run.rng, n, m), pair_ok)
        run.iterations["itr1"] += used
        if pair is None:
            run.rejections["two_cos"] += 1
            continue
        run.record("2cos", pair)
        i, j = pair
        r12 = horn_pair_rotation_batch(uh[[i]], vh[[i]], uh[[j]], vh[[j]])[0][0]
        collected, reached, used = _collect(
            run.rng,
            n,
            pair,
            lambda ks: three_cos_rotation_mask(uh, vh, pair, r12, ks, bounds),
            params.X,
            budget["itr3"],
            budget["itr4"],
            on_accept=lambda k: run.record("3cos", (i, j, k)),
        )
        run.iterations["itr3"] += used
        if not reached:
            run.rejections["three_cos"] += 1
            run.partial(pair + tuple(collected))
            continue
        try:
            return _finish(cset, params, pair, collected, None, run.base())
        except DegenerateConfiguration:
            run.rejections["refine"] += 1
    return _exhausted(cset, run.best, None, run.base())


def _collect_four_cos(run, cset, three, budget, bounds, x_needed):
    p, q = cset.src, cset.dst
    a, b, c = three.indices
    return _collect(
        run.rng,
        len(cset),
        three.indices,
        lambda ks: four_cos_mask(p, q, three, ks, bounds),
        x_needed,
        budget["itr3"],
        budget["itr4"],
        on_accept=lambda k: run.record("4cos", (a, b, c, k)),
    )


def _registration_tail(run, cset, tri, known_scale, budget):
    """Full 3-COS checks, 4-COS collection and refinement for one candidate triple.

    Returns a report on success, otherwise ``None`` after recording why.
    """
    params, bounds = run.params, run.params.bounds
    p, q = cset.src, cset.dst
    if not scale_triplet_mask(p, q, [tri], bounds, known_scale)[0]:
        run.rejections["scale"] += 1
        return None
    three = three_cos_from_points(p[list(tri)], q[list(tri)], bounds, known_scale, tri)
    if isinstance(three, Rejected):
        run.rejections[three.check] += 1
        return None
    run.record("3cos", tri)
    collected, reached, used = _collect_four_cos(run, cset, three, budget, bounds, params.X)
    run.iterations["itr3"] += used
    if not reached:
        run.rejections["four_cos"] += 1
        run.partial(tuple(tri) + tuple(collected))
        return None
    try:
        return _finish(cset, params, tri, collected, 1.0 if known_scale else None, run.base())
    except DegenerateConfiguration:
        run.rejections["refine"] += 1
        return None


def icos_registration_known_scale(
    cset: CorrespondenceSet, params: IcosParams, trace: Optional[list] = None
) -> SolveReport:
    """Robust rigid ``(R, t)`` with scale fixed to 1, using decoupled sampling.

    A pair is first screened by ``|I^s - 1|``, then completed to a triple by
    single draws under the same screen, before the full 3-COS checks run.
    ``estimate`` is a :class:`SimilarityTransform` with ``scale == 1``.
    """
    _require(cset, CorrespondenceKind.POINTS, params.X + 3)
    n = len(cset)
    p, q = cset.src, cset.dst
    bounds = params.bounds
    budget = params.budgets(2)
    run = _Run(params, trace)

    for restart in range(params.max_restarts):
        run.restarts = restart
        pair, used = _first_passing(
            run.rng,
            budget["itr1"],
            lambda m: draw_pairs(run.rng, n, m),
            lambda b: known_scale_pair_mask(p, q, b[0], b[1], bounds),
        )
        run.iterations["itr1"] += used
        if pair is None:
            run.rejections["pair"] += 1
            continue
        run.record("pair", pair)
        i, j = pair
        ks = draw_singles(run.rng, n, pair, budget["itr2"])
        ok = known_scale_pair_mask(p, q, np.full(len(ks), i), ks, bounds)
        ok &= known_scale_pair_mask(p, q, np.full(len(ks), j), ks, bounds)
        hit = np.flatnonzero(ok)
        if hit.size == 0:
            run.iterations["itr2"] += len(ks)
            run.rejections["third"] += 1
            continue
        run.iterations["itr2"] += int(hit[0]) + 1
        report = _registration_tail(run, cset, (i, j, int(ks[hit[0]])), True, budget)
        if report is not None:
            return report
    return _exhausted(cset, run.best, 1.0, run.base())


def icos_registration_unknown_scale(
    cset: CorrespondenceSet, params: IcosParams, trace: Optional[list] = None
) -> SolveReport:
    """Robust similarity ``(s, R, t)`` from point correspondences.

    Seed triples are drawn directly and screened by the scale-invariant
    constraints; each restart draws until one passes or ``max_itr1`` draws
    are spent.
    """
    _require(cset, CorrespondenceKind.POINTS, params.X + 3)
    n = len(cset)
    p, q = cset.src, cset.dst
    bounds = params.bounds
    budget = params.budgets(3)
    run = _Run(params, trace)

    for restart in range(params.max_restarts):
        run.restarts = restart
        tri, used = _first_passing(
            run.rng,
            budget["itr1"],
            lambda m: draw_triples(run.rng, n, m),
            lambda t: scale_triplet_mask(p, q, t, bounds, False),
        )
        run.iterations["itr1"] += used
        if tri is None:
            run.rejections["scale"] += 1
            continue
        report = _registration_tail(run, cset, tri, False, budget)
        if report is not None:
            return report
    return _exhausted(cset, run.best, None, run.base())


def icos_registration(cset: CorrespondenceSet, params: IcosParams, known_scale: bool = False, trace=None):
    if known_scale:
        return icos_registration_known_scale(cset, params, trace)
    return icos_registration_unknown_scale(cset, params, trace)


SOLVERS: dict[str, Callable] = {
    "rotation": icos_rotation_search,
    "known-scale": icos_registration_known_scale,
    "unknown-scale": icos_registration_unknown_scale,
}
