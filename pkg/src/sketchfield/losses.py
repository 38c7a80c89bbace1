"""Training objectives: point MSE, stroke intensity maps and the visual loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .sketch import SketchError, VectorSketch


@dataclass(frozen=True)
class LossWeights:
    mse: float = 0.7
    gamma: float = 150.0
    beta: float = 0.7

    def __post_init__(self):
        if min(self.mse, self.gamma, self.beta) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class IntensityMap:
    values: object  # (H, W) ndarray, or Tensor when built from differentiable points
    gamma: float
    composition: str = "max"

    @property
    def resolution(self):
        return tuple(self.values.shape)

    def array(self) -> np.ndarray:
        return self.values.data if isinstance(self.values, Tensor) else np.asarray(self.values)


def mse_loss(pred, target) -> Tensor:
    """Mean over points of the squared Euclidean error."""
    pred = ag.as_tensor(pred)
    target = target.points if isinstance(target, VectorSketch) else target
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise SketchError(f"point count mismatch: {pred.shape[0]} predicted vs {target.shape[0]} target")
    d = pred - target
    return ag.mean(ag.sum_(d * d, axis=1))


def cell_centers(height: int, width: int) -> np.ndarray:
    """(H*W, 2) cell-center (x, y) coordinates, row-major."""
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _segments(offsets, n_points):
    """Endpoint index pairs and stroke ids; single-point strokes become zero-length segments."""
    ends = np.append(offsets[1:], n_points)
    a, b, k = [], [], []
    for i, (s, e) in enumerate(zip(offsets, ends)):
        if e - s == 1:
            a.append([s]); b.append([s])
        else:
            a.append(np.arange(s, e - 1)); b.append(np.arange(s + 1, e))
        k.append(np.full(len(a[-1]), i))
    return np.concatenate(a), np.concatenate(b), np.concatenate(k)


def _nearest_segment(g, pa, pb, seg_stroke, n_strokes, per_stroke, block=2048):
    """Index of the closest segment per cell (first on ties), or per (cell, stroke)."""
    ab = pb - pa
    denom = (ab * ab).sum(1)
    inv = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), 0.0)
    ax, ay, bx, by = pa[:, 0], pa[:, 1], ab[:, 0], ab[:, 1]
    best = np.empty((len(g), n_strokes) if per_stroke else len(g), dtype=np.int64)
    groups = [np.flatnonzero(seg_stroke == k) for k in range(n_strokes)] if per_stroke else None
    for s0 in range(0, len(g), block):
        gs = g[s0:s0 + block]
        dx = gs[:, :1] - ax
        dy = gs[:, 1:] - ay
        r = np.clip((dx * bx + dy * by) * inv, 0.0, 1.0)
        dx -= r * bx
        dy -= r * by
        d2 = dx * dx + dy * dy
        if per_stroke:
            for k, idx in enumerate(groups):
                best[s0:s0 + len(gs), k] = idx[np.argmin(d2[:, idx], axis=1)]
        else:
            best[s0:s0 + len(gs)] = np.argmin(d2, axis=1)
    return best


def segment_distance(g: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Differentiable distance from fixed points ``g`` to segments a-b (row-aligned)."""
    ab = b - a
    ag_ = Tensor(g.astype(a.dtype)) - a
    denom = ag.sum_(ab * ab, axis=1)
    safe = Tensor((denom.data <= 0).astype(a.dtype))  # zero-length segment -> r = 0
    r = ag.clip(ag.sum_(ag_ * ab, axis=1) / (denom + safe), 0.0, 1.0)
    diff = ag_ - ag.reshape(r, (-1, 1)) * ab
    return ag.norm(diff, axis=1)


def intensity_map(points, offsets, gamma: float, resolution=(64, 64),
                  composition: str = "max") -> IntensityMap:
    """exp(-gamma * distance to the nearest stroke segment) on cell centers.

    ``points`` is an (N, 2) array or Tensor; ``offsets`` the stroke starts.
    ``composition="max"`` takes the cell-wise max over strokes, ``"sum"``
    adds the per-stroke maps.  Gradients reach only the winning segment.
    """
    if isinstance(points, VectorSketch):
        points, offsets = points.points, points.stroke_offsets
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if composition not in ("max", "sum"):
        raise ValueError(f"unknown composition {composition!r}")
    pts = ag.as_tensor(points) if isinstance(points, Tensor) else Tensor(np.asarray(points, np.float64))
    if pts.shape[0] == 0:
        raise SketchError("cannot build an intensity map from an empty sketch")
    offsets = np.asarray(offsets, dtype=np.int64)
    h, w = resolution
    g = cell_centers(h, w)
    ia, ib, ks = _segments(offsets, pts.shape[0])
    P = pts.data.astype(np.float64)
    K = len(offsets)
    per_stroke = composition == "sum"
    best = _nearest_segment(g, P[ia], P[ib], ks, K, per_stroke)
    if per_stroke:
        gg = np.repeat(g, K, axis=0)
        seg = best.reshape(-1)
    else:
        gg, seg = g, best
    if not pts.requires_grad:
        vals = np.exp(-gamma * _np_dist(gg, P[ia[seg]], P[ib[seg]]))
        if per_stroke:
            vals = vals.reshape(-1, K).sum(1)
        return IntensityMap(vals.reshape(h, w).astype(pts.dtype), gamma, composition)
    d = segment_distance(gg, ag.getitem(pts, ia[seg]), ag.getitem(pts, ib[seg]))
    vals = ag.exp(d * (-gamma))
    if per_stroke:
        vals = ag.sum_(ag.reshape(vals, (-1, K)), axis=1)
    return IntensityMap(ag.reshape(vals, (h, w)), gamma, composition)


def _np_dist(g, a, b):
    ab = b - a
    denom = (ab * ab).sum(1)
    r = np.where(denom > 0, ((g - a) * ab).sum(1) / np.where(denom > 0, denom, 1), 0.0)
    r = np.clip(r, 0, 1)
    return np.linalg.norm(g - a - r[:, None] * ab, axis=1)


def visual_loss(gt_map: IntensityMap, pred_map: IntensityMap) -> Tensor:
    """Euclidean norm of the cell-wise map difference."""
    if gt_map.resolution != pred_map.resolution:
        raise SketchError(f"intensity map resolution mismatch: {gt_map.resolution} "
                          f"vs {pred_map.resolution}")
    if gt_map.gamma != pred_map.gamma:
        raise SketchError(f"intensity map gamma mismatch: {gt_map.gamma} vs {pred_map.gamma}")
    a = gt_map.values if isinstance(gt_map.values, Tensor) else Tensor(gt_map.values)
    b = pred_map.values if isinstance(pred_map.values, Tensor) else Tensor(pred_map.values)
    if a.dtype != b.dtype:
        a = Tensor(a.data.astype(b.dtype)) if not a.requires_grad else a
    return ag.norm(a - b)


def implicit_loss(pred_points, pred_offsets, gt_map: IntensityMap, gt_points,
                  weights: LossWeights = LossWeights(), resolution=(64, 64)):
    """visual + lambda * mse; returns (total, visual, mse) tensors.

    ``gt_points`` are the targets aligned with the predictions (the ground
    truth resampled to the same grid).  ``gt_map`` is built once from the raw
    ground truth and reused, since the visual term needs no resampling.
    """
    pred_map = intensity_map(pred_points, pred_offsets, gt_map.gamma, resolution,
                             gt_map.composition)
    lv = visual_loss(gt_map, pred_map)
    lm = mse_loss(pred_points, gt_points)
    return lv + lm * weights.mse, lv, lm


def gamma_schedule(step: int, total: int, lo: float = 20.0, hi: float = 200.0,
                   interval: int = 100) -> float:
    """Linear lo -> hi, held constant between updates every ``interval`` steps."""
    if total <= 0 or step >= total:
        return float(hi)
    if step < 0:
        raise ValueError("step must be non-negative")
    q = (step // interval) * interval
    return lo + (hi - lo) * q / total
