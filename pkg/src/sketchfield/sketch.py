"""Canonical in-memory vector sketch and the pure transforms on it."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

PEN_DOWN = 0
PEN_UP = 1


class SketchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VectorSketch:
    """Way-points grouped into strokes.

    ``points`` is an (N, 2) float array of (x, y); ``stroke_offsets`` holds the
    index of the first point of each stroke.  Pen states are derived: every
    stroke, including the last, ends with a pen-up.
    """

    points: np.ndarray
    stroke_offsets: np.ndarray
    sketch_id: int | None = None
    label: str | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        offs = np.asarray(self.stroke_offsets, dtype=np.int64).reshape(-1)
        if len(offs) == 0 or offs[0] != 0:
            raise SketchError("stroke_offsets must start at 0")
        if np.any(np.diff(offs) <= 0) or offs[-1] >= len(pts):
            raise SketchError("stroke_offsets must be strictly increasing and inside the point range")
        pts.setflags(write=False)
        offs.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "stroke_offsets", offs)

    @classmethod
    def from_strokes(cls, strokes, sketch_id=None, label=None) -> "VectorSketch":
        strokes = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in strokes]
        strokes = [s for s in strokes if len(s)]
        if not strokes:
            raise SketchError(f"sketch too short (id={sketch_id})")
        sizes = [len(s) for s in strokes]
        offs = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        return cls(np.concatenate(strokes), offs, sketch_id, label)

    @classmethod
    def from_stroke3(cls, xyp, sketch_id=None, label=None) -> "VectorSketch":
        """Absolute (x, y, pen) rows; pen == 1 ends a stroke."""
        xyp = np.asarray(xyp, dtype=np.float64).reshape(-1, 3)
        ends = np.flatnonzero(xyp[:, 2] >= 0.5) + 1
        cuts = [0] + [int(e) for e in ends if e < len(xyp)]
        return cls(xyp[:, :2], np.asarray(cuts), sketch_id, label)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_strokes(self) -> int:
        return len(self.stroke_offsets)

    @property
    def stroke_sizes(self) -> np.ndarray:
        return np.diff(np.append(self.stroke_offsets, self.n_points))

    @property
    def strokes(self) -> list[np.ndarray]:
        return np.split(self.points, self.stroke_offsets[1:])

    @property
    def pen(self) -> np.ndarray:
        pen = np.zeros(self.n_points, dtype=np.int8)
        pen[np.append(self.stroke_offsets[1:], self.n_points) - 1] = PEN_UP
        return pen

    def stroke3(self) -> np.ndarray:
        return np.column_stack([self.points, self.pen])

    def with_points(self, points) -> "VectorSketch":
        return VectorSketch(points, self.stroke_offsets, self.sketch_id, self.label)

    def __repr__(self):
        return (f"VectorSketch(id={self.sketch_id}, N={self.n_points}, "
                f"K={self.n_strokes})")


@dataclass(frozen=True)
class NormalizationRecord:
    bbox: tuple  # (xmin, ymin, xmax, ymax) of the source coordinates
    scale: float
    translation: tuple  # added after scaling


def normalize(sk: VectorSketch) -> tuple[VectorSketch, NormalizationRecord]:
    """Scale the longest bounding-box side to 1 and center in the unit square."""
    pts = sk.points
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    scale = 1.0 / extent if extent > 0 else 1.0
    size = (hi - lo) * scale
    shift = (1.0 - size) / 2 - lo * scale
    out = np.clip(pts * scale + shift, 0.0, 1.0)
    rec = NormalizationRecord(tuple(map(float, (*lo, *hi))), scale, tuple(map(float, shift)))
    return sk.with_points(out), rec


def stroke_point_counts(J: int, K: int) -> np.ndarray:
    """J points over K strokes: floor(J/K) each, the remainder to the earliest strokes."""
    if J < K:
        raise SketchError(f"insufficient points for stroke count (J={J} < K={K})")
    if K < 1:
        raise SketchError("stroke count must be positive")
    counts = np.full(K, J // K, dtype=np.int64)
    counts[: J % K] += 1
    return counts


def _polyline_at(pts: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Points at arc-length fractions ``u`` in [0, 1]; u = 0 and 1 hit the endpoints exactly."""
    u = np.asarray(u, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    ends = pts[0], pts[-1]
    pts, seg = pts[keep], seg[seg > 0]
    if len(pts) == 1:
        return np.repeat(pts, len(u), axis=0)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    a = u * arc[-1]
    out = np.column_stack([np.interp(a, arc, pts[:, 0]), np.interp(a, arc, pts[:, 1])])
    out[u <= 0] = ends[0]
    out[u >= 1] = ends[1]
    return out


def _resample_polyline(pts: np.ndarray, n: int) -> np.ndarray:
    if n == 1 or len(pts) == 1:
        return np.repeat(pts[:1], n, axis=0)
    return _polyline_at(pts, np.linspace(0.0, 1.0, n))


def resample_uniform(sk: VectorSketch, J: int) -> VectorSketch:
    """Exactly J points, arc-length uniform within each stroke."""
    counts = stroke_point_counts(J, sk.n_strokes)
    strokes = [_resample_polyline(s, int(c)) for s, c in zip(sk.strokes, counts)]
    return VectorSketch.from_strokes(strokes, sk.sketch_id, sk.label)


def points_at_times(sk: VectorSketch, t, n_ref: int | None = None) -> np.ndarray:
    """Ground-truth positions at global timestamps ``t`` in [0, 1).

    The reference parametrization is ``resample_uniform(sk, n_ref)`` placed at
    t = j / n_ref (``n_ref`` defaults to N): stroke k owns the timestamps of
    its reference slots and is traversed arc-length uniformly across them.
    For t = j / n_ref the result equals the reference points exactly, and the
    map from t to position does not depend on how many timestamps are queried.
    """
    n_ref = sk.n_points if n_ref is None else n_ref
    counts = stroke_point_counts(n_ref, sk.n_strokes)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos = np.asarray(t, dtype=np.float64) * n_ref
    k = np.clip(np.searchsorted(starts, pos + 1e-9, side="right") - 1, 0, sk.n_strokes - 1)
    out = np.empty((len(pos), 2))
    for i, stroke in enumerate(sk.strokes):
        sel = k == i
        if not sel.any():
            continue
        span = max(int(counts[i]) - 1, 1)
        u = np.clip((pos[sel] - starts[i]) / span, 0.0, 1.0) if counts[i] > 1 else np.zeros(sel.sum())
        out[sel] = _polyline_at(stroke, u)
    return out


def point_segment_distance(p, a, b):
    """Distance from points ``p`` to segments ``a``-``b`` (broadcasting over leading axes)."""
    ab = b - a
    denom = (ab * ab).sum(-1)
    r = np.where(denom > 0, ((p - a) * ab).sum(-1) / np.where(denom > 0, denom, 1), 0.0)
    r = np.clip(r, 0.0, 1.0)
    return np.linalg.norm(p - (a + r[..., None] * ab), axis=-1)


def _rdp_keep(pts: np.ndarray, epsilon: float) -> np.ndarray:
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = point_segment_distance(pts[i + 1:j], pts[i], pts[j])
        k = int(np.argmax(d))
        if d[k] >= epsilon:
            m = i + 1 + k
            keep[m] = True
            stack.append((m, j))
            stack.append((i, m))
    return keep


def rdp_simplify(sk: VectorSketch, epsilon: float) -> VectorSketch:
    """Per-stroke Ramer-Douglas-Peucker; stroke endpoints are always kept.

    A point survives when its distance to the current chord is >= epsilon, so
    epsilon == 0 leaves the sketch untouched.
    """
    if epsilon < 0:
        raise SketchError("epsilon must be non-negative")
    out = []
    for s in sk.strokes:
        out.append(s if len(s) < 3 else s[_rdp_keep(s, epsilon)])
    return VectorSketch.from_strokes(out, sk.sketch_id, sk.label)


# storage accounting ------------------------------------------------------

def storage_bytes(sk: VectorSketch, repr: str, *, size=(256, 256), dim: int = 64) -> int:
    """Bytes needed to store one sketch under a representation.

    ``vector16``: N x 3 values at 2 bytes.  ``binary-raster``: one bit per
    pixel of ``size``.  ``sparse-binary-raster``: two 16-bit coordinates per
    inked pixel.  ``inr-latent``: ``dim`` half floats (decoder weights are
    shared across the dataset and not counted).
    """
    if repr == "vector16":
        return sk.n_points * 3 * 2
    if repr == "binary-raster":
        nx, ny = size
        return math.ceil(nx * ny / 8)
    if repr == "sparse-binary-raster":
        from .raster import rasterize
        nx, ny = size
        inked = int(np.count_nonzero(rasterize(sk, ny, nx)))
        return inked * 2 * 2
    if repr == "inr-latent":
        if dim < 1:
            raise SketchError("latent dimension must be positive")
        return dim * 2
    raise SketchError(f"unknown representation {repr!r}")


# binary record -----------------------------------------------------------

def encode_record(sk: VectorSketch) -> bytes:
    """Little-endian: u32 N, u32 K, K x u32 offsets, N x (f32 x, f32 y)."""
    head = struct.pack("<II", sk.n_points, sk.n_strokes)
    return (head + sk.stroke_offsets.astype("<u4").tobytes()
            + sk.points.astype("<f4").tobytes())


def decode_record(buf: bytes, offset: int = 0) -> tuple[VectorSketch, int]:
    """Parse one record starting at ``offset``; returns the sketch and the end offset."""
    if len(buf) - offset < 8:
        raise SketchError("truncated sketch record")
    n, k = struct.unpack_from("<II", buf, offset)
    end = offset + 8 + 4 * k + 8 * n
    if len(buf) < end:
        raise SketchError("truncated sketch record")
    offs = np.frombuffer(buf, "<u4", k, offset + 8)
    pts = np.frombuffer(buf, "<f4", 2 * n, offset + 8 + 4 * k).reshape(n, 2)
    return VectorSketch(pts.astype(np.float64), offs.astype(np.int64)), end

