"""Compatible-structure invariants and their Boolean constraint checks.

Every check here is a pure conjunction of threshold tests. The ``*_mask``
functions evaluate one check for a whole batch of candidate indices and
short-circuit in the fixed order cheap invariants, residual, geodesic;
the scalar functions are the per-structure API built on the same code.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import NamedTuple, Union

import numpy as np

from .exceptions import DivisionByZero, InvalidParameter
from .geometry import (
    Correspondence,
    CorrespondenceSet,
    SimilarityTransform,
    collinear_batch,
    geodesic_distance_batch,
    horn_pair_rotation,
    horn_pair_rotation_batch,
    horn_triple_rotation_batch,
)

# Default bound multipliers (times sigma).
TABLE_MULTIPLIERS = {"L": 2.5, "G": 4.0, "F": 10.5, "A": 4.5, "B": 5.0, "C": 6.0, "D": 10.5}
INLIER_MULTIPLIER = 5.2
# Bounds are built from max(sigma, SIGMA_FLOOR) so that noiseless data keeps positive bounds.
SIGMA_FLOOR = 1e-9
# Source points closer than this make a structure ineligible.
COINCIDENT_TOL = 1e-9


@dataclass(frozen=True)
class NoiseBounds:
    """Thresholds for every constraint, in absolute units.

    ``F`` and ``D`` bound geodesic distances and are compared in radians.
    """

    sigma: float
    L: float
    G: float
    F: float
    A: float
    B: float
    C: float
    D: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise InvalidParameter(f"sigma must be non-negative, got {self.sigma}")
        for f in fields(self)[1:]:
            if not getattr(self, f.name) > 0:
                raise InvalidParameter(f"bound {f.name} must be positive")

    @classmethod
    def from_sigma(cls, sigma: float, **multipliers) -> "NoiseBounds":
        unknown = set(multipliers) - set(TABLE_MULTIPLIERS)
        if unknown:
            raise InvalidParameter(f"unknown bound names: {sorted(unknown)}")
        mult = {**TABLE_MULTIPLIERS, **multipliers}
        eff = max(float(sigma), SIGMA_FLOOR)
        return cls(sigma=float(sigma), **{k: v * eff for k, v in mult.items()})

    @classmethod
    def unbounded(cls, sigma: float = 0.0) -> "NoiseBounds":
        return cls(sigma, *([np.inf] * 7))

    def scaled(self, factor: float) -> "NoiseBounds":
        """All bounds multiplied by ``factor`` (sigma unchanged)."""
        return replace(self, **{f.name: getattr(self, f.name) * factor for f in fields(self)[1:]})

    @property
    def inlier_threshold(self) -> float:
        return INLIER_MULTIPLIER * max(self.sigma, SIGMA_FLOOR)


class TwoCosState(NamedTuple):
    indices: tuple
    raw_rotation: np.ndarray


class ThreeCosState(NamedTuple):
    indices: tuple
    raw_scale: float
    raw_rotation: np.ndarray
    raw_translation: np.ndarray


class Rejected(NamedTuple):
    """Marks a candidate structure that failed the named check."""

    check: str


def unit_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# rotation search


def length_invariant_batch(ui, vi, uj, vj) -> np.ndarray:
    """Length invariants for unit-normalized stacks."""
    return np.abs(np.linalg.norm(ui - uj, axis=-1) - np.linalg.norm(vi - vj, axis=-1))


def length_invariant(ci: Correspondence, cj: Correspondence) -> float:
    """``| |u_i - u_j| - |v_i - v_j| |`` on unit-normalized vectors, in ``[0, 2]``."""
    ui, vi, uj, vj = unit_rows([ci.src, ci.dst, cj.src, cj.dst])
    return float(length_invariant_batch(ui, vi, uj, vj))


def check_two_cos(ci, cj, bounds: NoiseBounds) -> bool:
    return length_invariant(ci, cj) <= bounds.L


def three_cos_rotation_mask(uh, vh, pair, r12, candidates, bounds: NoiseBounds) -> np.ndarray:
    """Which candidate indices form an eligible 3-COS with the 2-COS ``pair``.

    ``uh``/``vh`` are the unit-normalized source/target vectors of the whole set.
    """
    i, j = pair
    k = np.asarray(candidates, dtype=int)
    uk, vk = uh[k], vh[k]
    ok = (length_invariant_batch(uh[i], vh[i], uk, vk) <= bounds.L) & (
        length_invariant_batch(uh[j], vh[j], uk, vk) <= bounds.L
    )
    sel = np.flatnonzero(ok)
    if sel.size == 0:
        return ok
    res = np.linalg.norm(uk[sel] @ r12.T - vk[sel], axis=1)
    ok[sel[res > bounds.G]] = False
    sel = sel[res <= bounds.G]
    if sel.size == 0:
        return ok
    uks, vks = uk[sel], vk[sel]
    ones = np.ones((sel.size, 1))
    r1k, ok1 = horn_pair_rotation_batch(ones * uh[i], ones * vh[i], uks, vks)
    r2k, ok2 = horn_pair_rotation_batch(ones * uh[j], ones * vh[j], uks, vks)
    good = ok1 & ok2
    good &= geodesic_distance_batch(r12, r1k) <= bounds.F
    good &= geodesic_distance_batch(r12, r2k) <= bounds.F
    good &= geodesic_distance_batch(r1k, r2k) <= bounds.F
    ok[sel[~good]] = False
    return ok


def check_three_cos_rotation(two_cos: TwoCosState, ck: Correspondence, cset: CorrespondenceSet, bounds) -> bool:
    """Length, residual and rotation-compatibility checks for adding ``ck``.

    Degenerate pair rotations count as a failed check.
    """
    i, j = two_cos.indices
    if ck.index in (i, j):
        raise InvalidParameter("candidate already belongs to the 2-COS")
    uh = unit_rows([cset.src[i], cset.src[j], ck.src])
    vh = unit_rows([cset.dst[i], cset.dst[j], ck.dst])
    return bool(three_cos_rotation_mask(uh, vh, (0, 1), two_cos.raw_rotation, [2], bounds)[0])


def build_two_cos(ci: Correspondence, cj: Correspondence) -> TwoCosState:
    return TwoCosState((ci.index, cj.index), horn_pair_rotation(ci.src, ci.dst, cj.src, cj.dst))


# --------------------------------------------------------------------------
# registration


def scale_invariant(ci: Correspondence, cj: Correspondence) -> float:
    """``|Q_i - Q_j| / |P_i - P_j|``."""
    d = np.linalg.norm(ci.src - cj.src)
    if d == 0:
        raise DivisionByZero("source points coincide")
    return float(np.linalg.norm(ci.dst - cj.dst) / d)


def _pair_ratios(p, q, a, b):
    """Distances and scale invariants between rows ``a`` and ``b`` (broadcast)."""
    d = np.linalg.norm(p[a] - p[b], axis=-1)
    e = np.linalg.norm(q[a] - q[b], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return d, e / d


def known_scale_pair_mask(p, q, i, j, bounds: NoiseBounds) -> np.ndarray:
    """``|I^s_ij - 1| <= A / |P_ij|`` for index arrays ``i``, ``j``."""
    d, s = _pair_ratios(p, q, i, j)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (d > COINCIDENT_TOL) & (np.abs(s - 1.0) <= bounds.A / d)


def scale_triplet_mask(p, q, tri, bounds: NoiseBounds, known_scale: bool) -> np.ndarray:
    """Scale-invariant constraints for index triples ``tri`` of shape ``(m, 3)``."""
    tri = np.asarray(tri, dtype=int).reshape(-1, 3)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    d_ab, s_ab = _pair_ratios(p, q, a, b)
    d_bc, s_bc = _pair_ratios(p, q, b, c)
    d_ca, s_ca = _pair_ratios(p, q, c, a)
    ok = (d_ab > COINCIDENT_TOL) & (d_bc > COINCIDENT_TOL) & (d_ca > COINCIDENT_TOL)
    with np.errstate(divide="ignore", invalid="ignore"):
        ia, ib, ic = 1.0 / d_ab, 1.0 / d_bc, 1.0 / d_ca
        ok &= np.abs(s_ab - s_bc) <= bounds.A * (ia + ib)
        ok &= np.abs(s_bc - s_ca) <= bounds.A * (ib + ic)
        ok &= np.abs(s_ca - s_ab) <= bounds.A * (ic + ia)
        if known_scale:
            ok &= np.abs(s_ab - 1.0) <= bounds.A * ia
            ok &= np.abs(s_bc - 1.0) <= bounds.A * ib
            ok &= np.abs(s_ca - 1.0) <= bounds.A * ic
    sel = np.flatnonzero(ok)
    if sel.size:
        ok[sel[collinear_batch(p[tri[sel]])]] = False
    return ok


def check_scale_triplet(c1, c2, c3, bounds: NoiseBounds, known_scale: bool) -> bool:
    p = np.array([c1.src, c2.src, c3.src])
    q = np.array([c1.dst, c2.dst, c3.dst])
    return bool(scale_triplet_mask(p, q, [[0, 1, 2]], bounds, known_scale)[0])


def three_cos_from_points(p3, q3, bounds: NoiseBounds, known_scale: bool, indices=(0, 1, 2)):
    """Raw scale, rotation and translation of a 3-COS, or ``Rejected``."""
    p3 = np.asarray(p3, dtype=float)
    q3 = np.asarray(q3, dtype=float)
    pairs = ((0, 1), (1, 2), (2, 0))
    if known_scale:
        s = 1.0
    else:
        d = np.array([np.linalg.norm(p3[a] - p3[b]) for a, b in pairs])
        e = np.array([np.linalg.norm(q3[a] - q3[b]) for a, b in pairs])
        # weights |P_ij|^2 on ratios e/d
        s = float(np.sum(d * e) / np.sum(d * d))
    r, ok = horn_triple_rotation_batch(p3[None], q3[None])
    if not ok[0] or not s > 0:
        return Rejected("rotation")
    r = r[0]
    it = q3 - s * p3 @ r.T
    for a, b in pairs:
        if np.linalg.norm(it[a] - it[b]) > bounds.B:
            return Rejected("translation")
    return ThreeCosState(tuple(int(i) for i in indices), s, r, it.mean(axis=0))


def build_three_cos(c1, c2, c3, bounds: NoiseBounds, known_scale: bool) -> Union[ThreeCosState, Rejected]:
    p3 = np.array([c1.src, c2.src, c3.src])
    q3 = np.array([c1.dst, c2.dst, c3.dst])
    return three_cos_from_points(p3, q3, bounds, known_scale, (c1.index, c2.index, c3.index))


def four_cos_mask(p, q, three: ThreeCosState, candidates, bounds: NoiseBounds) -> np.ndarray:
    """Which candidate indices form an eligible 4-COS with ``three``."""
    k = np.asarray(candidates, dtype=int)
    idx = np.asarray(three.indices)
    p3, q3 = p[idx], q[idx]
    pk, qk = p[k], q[k]
    d = np.linalg.norm(p3[None, :, :] - pk[:, None, :], axis=2)
    e = np.linalg.norm(q3[None, :, :] - qk[:, None, :], axis=2)
    ok = np.all(d > COINCIDENT_TOL, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = e / d
        inv = 1.0 / d
        for a, b in ((0, 1), (0, 2), (1, 2)):
            ok &= np.abs(s[:, a] - s[:, b]) <= bounds.A * (inv[:, a] + inv[:, b])
    sel = np.flatnonzero(ok)
    if sel.size == 0:
        return ok
    res = np.linalg.norm(three.raw_scale * pk[sel] @ three.raw_rotation.T + three.raw_translation - qk[sel], axis=1)
    ok[sel[res > bounds.C]] = False
    sel = sel[res <= bounds.C]
    if sel.size == 0:
        return ok
    m = sel.size
    rots = [np.broadcast_to(three.raw_rotation, (m, 3, 3))]
    good = np.ones(m, dtype=bool)
    for a, b in ((0, 1), (0, 2), (1, 2)):
        pt = np.stack([np.broadcast_to(p3[a], (m, 3)), np.broadcast_to(p3[b], (m, 3)), pk[sel]], axis=1)
        qt = np.stack([np.broadcast_to(q3[a], (m, 3)), np.broadcast_to(q3[b], (m, 3)), qk[sel]], axis=1)
        r, okr = horn_triple_rotation_batch(pt, qt)
        good &= okr
        rots.append(r)
    for a in range(4):
        for b in range(a + 1, 4):
            good &= geodesic_distance_batch(rots[a], rots[b]) <= bounds.D
    ok[sel[~good]] = False
    return ok


def check_four_cos(three_cos: ThreeCosState, ck: Correspondence, cset: CorrespondenceSet, bounds) -> bool:
    """Scale, residual and rotation-compatibility checks for adding ``ck``.

    Degenerate triples (coincident or collinear points) count as failures.
    """
    if ck.index in three_cos.indices:
        raise InvalidParameter("candidate already belongs to the 3-COS")
    idx = list(three_cos.indices)
    p = np.vstack([cset.src[idx], ck.src])
    q = np.vstack([cset.dst[idx], ck.dst])
    local = three_cos._replace(indices=(0, 1, 2))
    return bool(four_cos_mask(p, q, local, [3], bounds)[0])


# --------------------------------------------------------------------------
# residuals


def residuals(cset: CorrespondenceSet, estimate) -> np.ndarray:
    """Residual of every correspondence under a rotation or similarity transform.

    Rotation search uses raw (unnormalized) vectors.
    """
    if isinstance(estimate, SimilarityTransform):
        return np.linalg.norm(estimate.apply(cset.src) - cset.dst, axis=1)
    r = np.asarray(estimate, dtype=float)
    if r.shape != (3, 3):
        raise InvalidParameter("estimate must be a rotation matrix or SimilarityTransform")
    return np.linalg.norm(cset.src @ r.T - cset.dst, axis=1)


def residual(c: Correspondence, estimate) -> float:
    if isinstance(estimate, SimilarityTransform):
        return float(np.linalg.norm(estimate.apply(c.src) - c.dst))
    return float(np.linalg.norm(np.asarray(estimate) @ c.src - c.dst))


__all__ = [
    "NoiseBounds",
    "TwoCosState",
    "ThreeCosState",
    "Rejected",
    "length_invariant",
    "check_two_cos",
    "check_three_cos_rotation",
    "build_two_cos",
    "scale_invariant",
    "check_scale_triplet",
    "build_three_cos",
    "check_four_cos",
    "residual",
    "residuals",
]
