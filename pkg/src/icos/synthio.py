"""Synthetic instances, PLY point clouds, instance dumps and error metrics."""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .exceptions import InvalidParameter, UnsupportedFormat
from .geometry import CorrespondenceKind, CorrespondenceSet, SimilarityTransform, geodesic_distance, random_rotation

# Inlier noise vectors longer than this many sigma are redrawn.
NOISE_TRUNCATION = 6.0
MAX_TRANSLATION = 3.0
DUMP_FORMAT = "icos-instance"
DUMP_VERSION = 1


@dataclass(frozen=True)
class GroundTruth:
    transform: SimilarityTransform
    inlier_mask: np.ndarray
    sigma: float
    seed: Optional[int] = None
    outlier_ratio: float = 0.0
    known_scale: bool = True

    @property
    def rotation(self) -> np.ndarray:
        return self.transform.rotation

    @property
    def inliers(self) -> np.ndarray:
        return np.flatnonzero(self.inlier_mask)


def _check_common(n, sigma, outlier_ratio, minimum=3):
    if int(n) < minimum:
        raise InvalidParameter(f"n must be >= {minimum}")
    if not sigma >= 0:
        raise InvalidParameter("sigma must be non-negative")
    if not 0 <= outlier_ratio < 1:
        raise InvalidParameter("outlier_ratio must lie in [0, 1)")


def _noise(rng, n, sigma):
    eps = rng.normal(0.0, sigma, (n, 3)) if sigma > 0 else np.zeros((n, 3))
    if sigma > 0:
        cap = NOISE_TRUNCATION * sigma
        bad = np.linalg.norm(eps, axis=1) > cap
        while np.any(bad):
            eps[bad] = rng.normal(0.0, sigma, (int(bad.sum()), 3))
            bad = np.linalg.norm(eps, axis=1) > cap
    return eps


def _unit_vectors(rng, n):
    x = rng.standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _outlier_mask(rng, n, outlier_ratio):
    n_out = int(math.floor(outlier_ratio * n + 1e-9))
    mask = np.ones(n, dtype=bool)
    mask[rng.choice(n, n_out, replace=False)] = False
    return mask


def gen_rotation_instance(n: int, sigma: float, outlier_ratio: float, seed=None):
    """Unit source vectors, rotated and noised targets, some replaced by random unit vectors.

    Returns ``(CorrespondenceSet, GroundTruth)``.
    """
    _check_common(n, sigma, outlier_ratio)
    rng = np.random.default_rng(seed)
    r = random_rotation(rng)
    u = _unit_vectors(rng, n)
    v = u @ r.T + _noise(rng, n, sigma)
    mask = _outlier_mask(rng, n, outlier_ratio)
    v[~mask] = _unit_vectors(rng, int((~mask).sum()))
    truth = GroundTruth(SimilarityTransform(1.0, r), mask, float(sigma), seed, float(outlier_ratio), True)
    return CorrespondenceSet.vectors(u, v), truth


def random_translation(rng, max_norm=MAX_TRANSLATION):
    """Direction uniform on the sphere, magnitude uniform in ``[0, max_norm]``."""
    return _unit_vectors(rng, 1)[0] * rng.uniform(0.0, max_norm)


def _uniform_ball(rng, n, radius):
    d = _unit_vectors(rng, n)
    return d * (radius * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0))[:, None]


def gen_registration_instance(
    n: int,
    sigma: float,
    outlier_ratio: float,
    scale_range: Union[None, float, Tuple[float, float]] = None,
    seed=None,
    source=None,
):
    """Point correspondences ``Q = s R P + t + noise`` with outliers in clutter.

    Parameters
    ----------
    scale_range : None, float or (lo, hi)
        ``None`` fixes the scale to 1, a float fixes it to that value, a pair
        draws it uniformly from ``[lo, hi)``.
    source : array_like, optional
        Source cloud. Clouds with more than ``n`` points are downsampled,
        and any given cloud is rescaled into the unit cube. Default is
        ``n`` uniform points in ``[-0.5, 0.5]^3``.

    Outliers are uniform in a ball of diameter ``s * sqrt(3)`` centered on
    the transformed source centroid.
    """
    _check_common(n, sigma, outlier_ratio)
    rng = np.random.default_rng(seed)
    if source is None:
        p = rng.uniform(-0.5, 0.5, (n, 3))
    else:
        src = np.asarray(source, dtype=float).reshape(-1, 3)
        if len(src) < n:
            raise InvalidParameter(f"source cloud has {len(src)} points, need {n}")
        p = downsample_and_rescale(src, n, rng)
    if scale_range is None:
        s, known = 1.0, True
    elif np.isscalar(scale_range):
        s, known = float(scale_range), True
    else:
        lo, hi = scale_range
        if not 0 < lo <= hi:
            raise InvalidParameter("scale range must satisfy 0 < lo <= hi")
        s, known = float(rng.uniform(lo, hi)), False
    r = random_rotation(rng)
    t = random_translation(rng)
    tf = SimilarityTransform(s, r, t)
    q = tf.apply(p) + _noise(rng, n, sigma)
    mask = _outlier_mask(rng, n, outlier_ratio)
    center = tf.apply(p.mean(axis=0))
    q[~mask] = center + _uniform_ball(rng, int((~mask).sum()), s * math.sqrt(3) / 2)
    truth = GroundTruth(tf, mask, float(sigma), seed, float(outlier_ratio), known)
    return CorrespondenceSet.points(p, q), truth


def downsample_and_rescale(points, target_n: int, seed=None) -> np.ndarray:
    """Random subset of ``target_n`` points, bounding box fitted into ``[-0.5, 0.5]^3``.

    The uniform rescale makes the largest bounding-box extent exactly 1 and
    centers the box at the origin.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if not 1 <= target_n <= len(points):
        raise InvalidParameter(f"cannot take {target_n} of {len(points)} points")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sub = points[rng.choice(len(points), target_n, replace=False)]
    # shift to the box corner first so large offsets do not cost precision
    shifted = sub - sub.min(axis=0)
    span = shifted.max(axis=0)
    extent = float(np.max(span))
    if extent == 0:
        raise InvalidParameter("all points coincide")
    return np.clip(shifted / extent - span / (2 * extent), -0.5, 0.5)


# --------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _read_header(f, path):
    if f.readline().strip() != b"ply":
        raise UnsupportedFormat(f"{path}: not a PLY file")
    fmt = None
    elements = []
    while True:
        line = f.readline()
        if not line:
            raise UnsupportedFormat(f"{path}: unterminated header")
        tok = line.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format" and len(tok) >= 2:
            fmt = tok[1]
        elif tok[0] == "element" and len(tok) == 3:
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property" and elements:
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], None))
            elif len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
            else:
                raise UnsupportedFormat(f"{path}: bad property line {line!r}")
        else:
            raise UnsupportedFormat(f"{path}: bad header line {line!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormat(f"{path}: unsupported PLY format {fmt!r}")
    if not elements or elements[0][0] != "vertex":
        raise UnsupportedFormat(f"{path}: vertex must be the first element")
    props = elements[0][2]
    names = [p[0] for p in props]
    if any(t is None for _, t in props) or not {"x", "y", "z"} <= set(names):
        raise UnsupportedFormat(f"{path}: vertex needs scalar x, y, z properties")
    return fmt, elements[0][1], props


def load_ply(path) -> np.ndarray:
    """Vertex coordinates ``(N, 3)`` in file order; other vertex properties are skipped."""
    with open(path, "rb") as f:
        fmt, count, props = _read_header(f, path)
        names = [p[0] for p in props]
        cols = [names.index(c) for c in "xyz"]
        if fmt == "ascii":
            rows = []
            for _ in range(count):
                line = f.readline()
                if not line:
                    raise UnsupportedFormat(f"{path}: expected {count} vertices")
                vals = line.split()
                if len(vals) < len(props):
                    raise UnsupportedFormat(f"{path}: short vertex line")
                rows.append([float(vals[c]) for c in cols])
            return np.array(rows, dtype=float).reshape(-1, 3)
        record = struct.Struct("<" + "".join(t for _, t in props))
        data = f.read(record.size * count)
        if len(data) < record.size * count:
            raise UnsupportedFormat(f"{path}: truncated vertex data")
        out = np.empty((count, 3))
        for k, vals in enumerate(record.iter_unpack(data)):
            out[k] = [vals[c] for c in cols]
        return out


def save_ply(path, points, binary: bool = False) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    fmt = "binary_little_endian" if binary else "ascii"
    kind = "double" if binary else "float"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(points)}\n"
        f"property {kind} x\nproperty {kind} y\nproperty {kind} z\nend_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(points.astype("<f8").tobytes())
        else:
            f.write("".join(f"{x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in points).encode("ascii"))


def load_matches(path) -> np.ndarray:
    """Index pairs ``i j`` (one per line, ``#`` comments allowed) as an ``(M, 2)`` array."""
    rows = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise UnsupportedFormat(f"{path}:{ln}: expected two indices")
            rows.append((int(parts[0]), int(parts[1])))
    return np.array(rows, dtype=int).reshape(-1, 2)


# --------------------------------------------------------------------------
# instance dumps


def dump_instance(cset: CorrespondenceSet, truth: GroundTruth, path=None) -> dict:
    """Self-describing JSON document for exact replay; written to ``path`` if given."""
    tf = truth.transform
    doc = {
        "format": DUMP_FORMAT,
        "version": DUMP_VERSION,
        "kind": cset.kind.value,
        "n": len(cset),
        "sigma": truth.sigma,
        "seed": truth.seed,
        "outlier_ratio": truth.outlier_ratio,
        "known_scale": truth.known_scale,
        "truth": {
            "scale": tf.scale,
            "rotation": tf.rotation.tolist(),
            "translation": tf.translation.tolist(),
        },
        "inlier_mask": [bool(b) for b in truth.inlier_mask],
        "src": cset.src.tolist(),
        "dst": cset.dst.tolist(),
    }
    if path is not None:
        with open(path, "w") as f:
            json.dump(doc, f)
            f.write("\n")
    return doc


def load_instance(source):
    """Inverse of :func:`dump_instance`; accepts a path or an already-parsed dict."""
    if isinstance(source, (str, os.PathLike)):
        with open(source) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise UnsupportedFormat(f"{source}: invalid JSON ({exc})") from exc
    else:
        doc = source
    if doc.get("format") != DUMP_FORMAT or doc.get("version") != DUMP_VERSION:
        raise UnsupportedFormat("not an icos instance dump (version 1)")
    cset = CorrespondenceSet(doc["src"], doc["dst"], CorrespondenceKind(doc["kind"]))
    t = doc["truth"]
    truth = GroundTruth(
        SimilarityTransform(t["scale"], t["rotation"], t["translation"]),
        np.array(doc["inlier_mask"], dtype=bool),
        float(doc["sigma"]),
        doc.get("seed"),
        float(doc.get("outlier_ratio", 0.0)),
        bool(doc.get("known_scale", True)),
    )
    return cset, truth


# --------------------------------------------------------------------------
# metrics

BENCH_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BenchRecord:
    """One solver run on one benchmark instance; field order is the CSV column order."""

    problem: str
    n: int
    sigma: float
    outlier_ratio: float
    ratio_index: int
    run: int
    seed: int
    solver: str
    E_R: float
    E_t: float
    E_s: float
    recall: float
    precision: float
    runtime: float
    status: str
    iterations: int
    schema_version: int = BENCH_SCHEMA_VERSION

    def __post_init__(self):
        if not 0.0 <= self.E_R <= 180.0 + 1e-9:
            raise InvalidParameter(f"E_R out of range: {self.E_R}")
        if not (0.0 <= self.recall <= 1.0 and 0.0 <= self.precision <= 1.0):
            raise InvalidParameter("recall and precision must lie in [0, 1]")


def metrics(report, truth: GroundTruth) -> dict:
    """Rotation error (degrees), translation and scale errors, inlier recall and precision."""
    found = np.asarray(report.inliers, dtype=int)
    true = set(np.flatnonzero(truth.inlier_mask).tolist())
    hits = len(true.intersection(found.tolist()))
    return {
        "E_R": math.degrees(geodesic_distance(report.rotation, truth.rotation)),
        "E_t": float(np.linalg.norm(report.translation - truth.transform.translation)),
        "E_s": abs(report.scale - truth.transform.scale),
        "recall": hits / len(true) if true else 1.0,
        "precision": hits / len(found) if len(found) else 0.0,
    }
