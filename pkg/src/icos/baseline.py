"""Hypothesize-and-test RANSAC with closed-form minimal solvers, for comparison runs."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DegenerateConfiguration, InvalidParameter
from .geometry import (
    CorrespondenceKind,
    CorrespondenceSet,
    SimilarityTransform,
    horn_pair_rotation_batch,
    horn_triple_rotation_batch,
    solve_rotation_nonminimal,
    solve_transform_nonminimal,
)
from .invariants import INLIER_MULTIPLIER, SIGMA_FLOOR, unit_rows
from .samplers import SolveReport, Status, draw_pairs, draw_triples, max_iterations

# Hypotheses scored per vectorized batch.
HYPOTHESIS_CHUNK = 32


@dataclass(frozen=True)
class RansacParams:
    """Exactly one of ``max_iterations`` and ``time_budget`` (seconds) is the stop condition."""

    sigma: float = 0.01
    confidence: float = 0.995
    max_iterations: Optional[int] = 1000
    time_budget: Optional[float] = None
    inlier_threshold: Optional[float] = None
    seed: Optional[int] = 0

    def __post_init__(self):
        if (self.max_iterations is None) == (self.time_budget is None):
            raise InvalidParameter("set exactly one of max_iterations and time_budget")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise InvalidParameter("max_iterations must be >= 1")
        if self.time_budget is not None and not self.time_budget > 0:
            raise InvalidParameter("time_budget must be positive")
        if not 0 < self.confidence < 1:
            raise InvalidParameter("confidence must lie in (0, 1)")

    @property
    def threshold(self) -> float:
        if self.inlier_threshold is not None:
            return float(self.inlier_threshold)
        return INLIER_MULTIPLIER * max(self.sigma, SIGMA_FLOOR)


def _run(cset, params, sample_size, hypothesize, known_scale):
    t0 = time.perf_counter()
    rng = np.random.default_rng(params.seed)
    n = len(cset)
    thr = params.threshold
    cap = params.max_iterations if params.max_iterations is not None else np.inf
    deadline = t0 + params.time_budget if params.time_budget is not None else np.inf
    best = np.zeros(n, dtype=bool)
    best_count = 0
    needed = cap
    done = 0
    while done < needed and time.perf_counter() < deadline:
        m = int(min(HYPOTHESIS_CHUNK, needed - done)) if np.isfinite(needed) else HYPOTHESIS_CHUNK
        res, ok = hypothesize(rng, m)
        for h in range(m):
            done += 1
            if ok[h]:
                inl = res[h] <= thr
                c = int(inl.sum())
                if c > best_count:
                    best, best_count = inl, c
                    adaptive = max_iterations(1, params.confidence, 1.0 - c / n, sample_size) if c < n else 1
                    needed = min(cap, adaptive)
            if done >= needed:
                break
    base = dict(iterations={"hypotheses": done}, elapsed=0.0)
    if best_count < sample_size:
        est = np.eye(3) if cset.kind is CorrespondenceKind.VECTORS else SimilarityTransform.identity()
        rep = SolveReport(est, np.array([], dtype=int), Status.BUDGET_EXHAUSTED, **base)
    else:
        subset = np.flatnonzero(best)
        try:
            if cset.kind is CorrespondenceKind.VECTORS:
                est = solve_rotation_nonminimal(cset, subset)
            else:
                est = solve_transform_nonminimal(cset, subset, known_scale)
        except DegenerateConfiguration:
            est = np.eye(3) if cset.kind is CorrespondenceKind.VECTORS else SimilarityTransform.identity()
            subset = np.array([], dtype=int)
        # confidence bound met before the cap means the run converged
        status = Status.CONVERGED if done < cap or needed < cap else Status.BUDGET_EXHAUSTED
        rep = SolveReport(est, subset, status, **base)
    rep.elapsed = time.perf_counter() - t0
    return rep


def ransac_rotation(cset: CorrespondenceSet, params: RansacParams) -> SolveReport:
    """RANSAC over 2-vector samples with the triad minimal solver."""
    if cset.kind is not CorrespondenceKind.VECTORS or len(cset) < 2:
        raise InvalidParameter("need at least 2 vector correspondences")
    u, v = cset.src, cset.dst
    uh, vh = unit_rows(u), unit_rows(v)
    n = len(cset)

    def hypothesize(rng, m):
        i, j = draw_pairs(rng, n, m)
        r, ok = horn_pair_rotation_batch(uh[i], vh[i], uh[j], vh[j])
        res = np.linalg.norm(np.einsum("hab,nb->hna", r, u) - v[None], axis=2)
        return res, ok

    return _run(cset, params, 2, hypothesize, None)


def ransac_registration(cset: CorrespondenceSet, params: RansacParams, known_scale: bool = True) -> SolveReport:
    """RANSAC over 3-point samples; unknown scale comes from the triple's weighted distance ratios."""
    if cset.kind is not CorrespondenceKind.POINTS or len(cset) < 3:
        raise InvalidParameter("need at least 3 point correspondences")
    p, q = cset.src, cset.dst
    n = len(cset)

    def hypothesize(rng, m):
        tri = draw_triples(rng, n, m)
        pt, qt = p[tri], q[tri]
        r, ok = horn_triple_rotation_batch(pt, qt)
        pc = pt - pt.mean(axis=1, keepdims=True)
        qc = qt - qt.mean(axis=1, keepdims=True)
        if known_scale:
            s = np.ones(m)
        else:
            a = np.linalg.norm(pc, axis=2)
            b = np.linalg.norm(qc, axis=2)
            s = np.sum(a * b, axis=1) / np.maximum(np.sum(a * a, axis=1), 1e-300)
        t = qt.mean(axis=1) - s[:, None] * np.einsum("hab,hb->ha", r, pt.mean(axis=1))
        pred = s[:, None, None] * np.einsum("hab,nb->hna", r, p) + t[:, None, :]
        return np.linalg.norm(pred - q[None], axis=2), ok

    return _run(cset, params, 3, hypothesize, 1.0 if known_scale else None)
