"""3D types and closed-form sub-solvers.

Rotations are plain ``(3, 3)`` float arrays. Batched helpers (suffix
``_batch``) take stacks with a leading axis and are what the samplers use
in their inner loops; the scalar functions are thin wrappers around them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import DegenerateConfiguration, DivisionByZero, EmptyInput, InvalidParameter

# Minimal configurations whose defining directions have a smaller sine are rejected.
PARALLEL_SINE_TOL = 1e-6
# Cross-covariance rank test (second singular value relative to the first).
RANK_TOL = 1e-9


def is_rotation(m, tol=1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(np.linalg.norm(m.T @ m - np.eye(3)) < tol and abs(np.linalg.det(m) - 1.0) < tol)


def rotation_about_axis(axis, angle) -> np.ndarray:
    """Rodrigues formula; ``axis`` need not be normalized."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def quaternion_to_matrix(q) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(r) -> np.ndarray:
    """Rotation matrix to unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k])
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation on SO(3): normalized 4D Gaussian as a unit quaternion."""
    return quaternion_to_matrix(rng.standard_normal(4))


# --------------------------------------------------------------------------
# geodesic distance


def geodesic_distance_batch(a, b) -> np.ndarray:
    """Rotation angle of ``a^T b`` for stacks of rotations, in ``[0, pi]``.

    Evaluated as ``atan2(|sin|, cos)`` from the skew and trace parts, which
    equals the clamped ``arccos((tr - 1) / 2)`` on SO(3) but keeps full
    precision near 0 and pi.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.swapaxes(a, -1, -2) @ b
    cos = (m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2] - 1.0) / 2.0
    vx = m[..., 2, 1] - m[..., 1, 2]
    vy = m[..., 0, 2] - m[..., 2, 0]
    vz = m[..., 1, 0] - m[..., 0, 1]
    sin = 0.5 * np.sqrt(vx * vx + vy * vy + vz * vz)
    return np.arctan2(sin, np.clip(cos, -1.0, 1.0))


def geodesic_distance(a, b) -> float:
    return float(geodesic_distance_batch(a, b))


# --------------------------------------------------------------------------
# SVD rotation


def kabsch_from_covariance_batch(h):
    """Rotations maximizing ``tr(R H)`` for a stack of cross-covariances ``H = sum m n^T``.

    Returns ``(rotations, ok)`` where ``ok`` flags a cross-covariance of rank
    at least 2; rotations at ``ok == False`` entries are meaningless.
    """
    h = np.asarray(h, dtype=float)
    u, s, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, -1, -2)
    ut = np.swapaxes(u, -1, -2)
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    v = v.copy()
    v[..., :, 2] *= d[..., None]
    ok = (s[..., 0] > 0) & (s[..., 1] > RANK_TOL * s[..., 0])
    return v @ ut, ok


def kabsch_rotation(src, dst) -> np.ndarray:
    """Rotation minimizing ``sum ||R src_i - dst_i||^2`` over SO(3).

    Parameters
    ----------
    src, dst : array_like, shape (M, 3)
        Paired vectors, already demeaned when used for point registration.

    Raises
    ------
    DegenerateConfiguration
        If the cross-covariance has rank below 2 (e.g. all ``src`` parallel).
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise InvalidParameter("src and dst must have the same length")
    if len(src) < 2:
        raise DegenerateConfiguration("at least two pairs are required")
    r, ok = kabsch_from_covariance_batch((src.T @ dst)[None])
    if not ok[0]:
        raise DegenerateConfiguration("cross-covariance has rank < 2")
    return r[0]


# --------------------------------------------------------------------------
# minimal solvers


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _triad_batch(a, b):
    """Right-handed orthonormal frames (a, a x b, a x (a x b)) up to sign, normalized per column."""
    a = _unit(a)
    n = np.cross(a, b)
    nn = np.linalg.norm(n, axis=-1)
    bn = np.linalg.norm(b, axis=-1)
    ok = nn > PARALLEL_SINE_TOL * bn
    n = n / np.where(ok, nn, 1.0)[..., None]
    c = np.cross(a, n)
    return np.stack([a, n, c], axis=-1), ok


def horn_pair_rotation_batch(u1, v1, u2, v2):
    """Triad rotations for stacks of two vector correspondences.

    Returns ``(rotations, ok)``; ``ok`` is False where either pair is
    near-parallel.
    """
    ou, oku = _triad_batch(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
    ov, okv = _triad_batch(np.asarray(v1, dtype=float), np.asarray(v2, dtype=float))
    return ov @ np.swapaxes(ou, -1, -2), oku & okv


def horn_pair_rotation(u1, v1, u2, v2) -> np.ndarray:
    """Rotation mapping the triad of ``(u1, u2)`` onto the triad of ``(v1, v2)``.

    Exact for noiseless inliers. Inputs need not be unit length.
    """
    r, ok = horn_pair_rotation_batch(
        np.reshape(u1, (1, 3)), np.reshape(v1, (1, 3)), np.reshape(u2, (1, 3)), np.reshape(v2, (1, 3))
    )
    if not ok[0]:
        raise DegenerateConfiguration("defining vectors are (nearly) parallel")
    return r[0]


def collinear_batch(p):
    """True where the point triples in ``p`` (shape ``(..., 3, 3)``) are (nearly) collinear."""
    a = p[..., 1, :] - p[..., 0, :]
    b = p[..., 2, :] - p[..., 0, :]
    cr = np.linalg.norm(np.cross(a, b), axis=-1)
    scale = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return ~(cr > PARALLEL_SINE_TOL * scale)


def horn_triple_rotation_batch(p, q):
    """Rotations for stacks of point triples ``p``, ``q`` with shape ``(m, 3, 3)``.

    Returns ``(rotations, ok)``. Both triples are demeaned, so the result is
    invariant to any positive scaling of ``q``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pc = p - p.mean(axis=-2, keepdims=True)
    qc = q - q.mean(axis=-2, keepdims=True)
    r, ok = kabsch_from_covariance_batch(np.swapaxes(pc, -1, -2) @ qc)
    return r, ok & ~collinear_batch(p)


def horn_triple_rotation(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(3, 3)
    q = np.asarray(q, dtype=float).reshape(3, 3)
    r, ok = horn_triple_rotation_batch(p[None], q[None])
    if not ok[0]:
        raise DegenerateConfiguration("source points are collinear")
    return r[0]


# --------------------------------------------------------------------------
# non-minimal pieces


def demean(points):
    """Return ``(centered, centroid)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInput("cannot demean an empty point list")
    centroid = points.mean(axis=0)
    return points - centroid, centroid


def weighted_scale(src_centered, dst_centered) -> float:
    """Weighted mean of ``|n_i| / |m_i|`` with weights ``|m_i|^2``."""
    m = np.linalg.norm(np.asarray(src_centered, dtype=float).reshape(-1, 3), axis=1)
    n = np.linalg.norm(np.asarray(dst_centered, dtype=float).reshape(-1, 3), axis=1)
    if len(m) == 0:
        raise EmptyInput("no pairs given")
    if np.any(m == 0):
        raise DivisionByZero("a demeaned source vector has zero length")
    # w * n / m with w = m^2 reduces to m * n
    return float(np.sum(m * n) / np.sum(m * m))


def recover_translation(s, r, src_centroid, dst_centroid) -> np.ndarray:
    return np.asarray(dst_centroid, dtype=float) - s * (np.asarray(r) @ np.asarray(src_centroid, dtype=float))


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidParameter(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return self.scale * points @ self.rotation.T + self.translation

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


# --------------------------------------------------------------------------
# correspondences


class CorrespondenceKind(str, enum.Enum):
    VECTORS = "vectors"
    POINTS = "points"


class Correspondence(NamedTuple):
    index: int
    src: np.ndarray
    dst: np.ndarray


class CorrespondenceSet:
    """Paired source/target 3-vectors indexed ``0..N-1``.

    Vector pairs with a zero-length entry are rejected here, since their
    unit normalization is undefined.
    """

    def __init__(self, src, dst, kind=CorrespondenceKind.POINTS):
        src = np.array(src, dtype=float)
        dst = np.array(dst, dtype=float)
        if src.ndim != 2 or src.shape[1] != 3 or src.shape != dst.shape:
            raise InvalidParameter(f"expected two (N, 3) arrays, got {src.shape} and {dst.shape}")
        if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
            raise InvalidParameter("correspondences contain non-finite values")
        self.kind = CorrespondenceKind(kind)
        if self.kind is CorrespondenceKind.VECTORS:
            bad = (np.linalg.norm(src, axis=1) == 0) | (np.linalg.norm(dst, axis=1) == 0)
            if np.any(bad):
                raise InvalidParameter(f"zero-norm vectors at indices {np.flatnonzero(bad).tolist()}")
        src.setflags(write=False)
        dst.setflags(write=False)
        self.src = src
        self.dst = dst

    @classmethod
    def vectors(cls, src, dst) -> "CorrespondenceSet":
        return cls(src, dst, CorrespondenceKind.VECTORS)

    @classmethod
    def points(cls, src, dst) -> "CorrespondenceSet":
        return cls(src, dst, CorrespondenceKind.POINTS)

    def __len__(self):
        return len(self.src)

    def __getitem__(self, i) -> Correspondence:
        i = int(i)
        return Correspondence(i, self.src[i], self.dst[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __repr__(self):
        return f"CorrespondenceSet(n={len(self)}, kind={self.kind.value})"


def solve_rotation_nonminimal(cset: CorrespondenceSet, subset: Sequence[int]) -> np.ndarray:
    """SVD rotation on the raw vector pairs of ``subset`` (no demeaning)."""
    idx = np.asarray(subset, dtype=int)
    if len(idx) < 2:
        raise DegenerateConfiguration("need at least two correspondences")
    return kabsch_rotation(cset.src[idx], cset.dst[idx])


def solve_transform_nonminimal(cset: CorrespondenceSet, subset: Sequence[int], known_scale=None) -> SimilarityTransform:
    """Demean, weighted scale (unless ``known_scale``), SVD rotation, translation."""
    idx = np.asarray(subset, dtype=int)
    if len(idx) < 3:
        raise DegenerateConfiguration("need at least three correspondences")
    m, p_bar = demean(cset.src[idx])
    n, q_bar = demean(cset.dst[idx])
    s = float(known_scale) if known_scale is not None else weighted_scale(m, n)
    r = kabsch_rotation(m, n)
    return SimilarityTransform(s, r, recover_translation(s, r, p_bar, q_bar))
