"""Latent inversion against a frozen decoder, completion and latent walks."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .codec import chamfer
from .losses import LossWeights, intensity_map
from .model import Decoder, build_sample_grid, decode
from .optim import Adam, DivergenceError
from .sketch import SketchError, VectorSketch, points_at_times
from .train import Target, objective

log = logging.getLogger(__name__)


class InversionDiverged(DivergenceError):
    def __init__(self, trace):
        super().__init__(f"inversion diverged after {len(trace)} steps; "
                         f"loss trace tail {[round(x, 5) for x in trace[-5:]]}")
        self.trace = trace


@dataclass(frozen=True)
class ObservationMask:
    """Observed part of a sketch: half-open time intervals, or stroke indices."""

    intervals: tuple = ()
    strokes: tuple = ()

    def __post_init__(self):
        if bool(self.intervals) == bool(self.strokes):
            raise ValueError("mask needs either time intervals or stroke indices (not both)")
        ivs = sorted((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if not 0 <= a < b <= 1:
                raise ValueError(f"mask interval [{a}, {b}) is empty or outside [0, 1)")
        for (_, b), (a, _) in zip(ivs, ivs[1:]):
            if a < b:
                raise ValueError("mask intervals overlap")
        if any(k < 0 for k in self.strokes):
            raise ValueError("stroke indices must be non-negative")
        object.__setattr__(self, "intervals", tuple(ivs))
        object.__setattr__(self, "strokes", tuple(sorted(set(int(k) for k in self.strokes))))

    @classmethod
    def full(cls):
        return cls(intervals=((0.0, 1.0),))

    @classmethod
    def parse(cls, text: str) -> "ObservationMask":
        """``"0:0.25"`` or ``"0:0.25,0.5:0.75"`` for time, ``"s0,2"`` for strokes."""
        text = text.strip()
        if text.startswith("s"):
            return cls(strokes=tuple(int(k) for k in text[1:].split(",") if k))
        ivs = []
        for part in text.split(","):
            m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*:\s*([0-9.eE+-]+)\s*", part)
            if not m:
                raise ValueError(f"bad mask interval {part!r} (expected start:end)")
            ivs.append((float(m.group(1)), float(m.group(2))))
        return cls(intervals=tuple(ivs))

    def rows(self, grid) -> np.ndarray:
        if self.strokes:
            sel = np.isin(grid.stroke_index, self.strokes)
        else:
            sel = np.zeros(grid.J, dtype=bool)
            for a, b in self.intervals:
                sel |= (grid.t >= a) & (grid.t < b)
        return np.flatnonzero(sel)

    def __str__(self):
        if self.strokes:
            return "s" + ",".join(map(str, self.strokes))
        return ",".join(f"{a:g}:{b:g}" for a, b in self.intervals)


def _run_offsets(rows: np.ndarray, stroke_index: np.ndarray) -> np.ndarray:
    """Starts of the contiguous same-stroke runs among the selected rows.

    A stroke cut by the mask keeps its observed part as a stroke of its own.
    """
    k = stroke_index[rows]
    brk = (np.diff(k) != 0) | (np.diff(rows) != 1)
    return np.flatnonzero(np.r_[True, brk])


def masked_target(sk: VectorSketch, mask: ObservationMask, gamma: float, resolution: int,
                  composition: str = "max", J: int | None = None) -> Target:
    """Loss target restricted to the observed rows of the (N, K) grid."""
    J = sk.n_points if J is None else J
    grid = build_sample_grid(J, sk.n_strokes)
    rows = mask.rows(grid)
    if len(rows) == 0:
        raise SketchError(f"mask {mask} selects no points of the sketch")
    pts = points_at_times(sk, grid.t[rows])
    offsets = _run_offsets(rows, grid.stroke_index)
    gt_map = intensity_map(pts, offsets, gamma, (resolution, resolution), composition)
    return Target(grid, pts, gt_map, rows, offsets)


@dataclass(frozen=True)
class InvertConfig:
    steps: int = 600
    lr: float = 1e-2
    init_std: float = 0.1  # about the per-coordinate spread of trained codes
    weights: LossWeights = field(default_factory=LossWeights)
    resolution: int = 64
    composition: str = "max"
    point_phase: float = 0.75
    joint_lr_scale: float = 0.01
    tolerance: float = 0.05  # masked-region CD above this flags the run as failed


@dataclass
class InversionResult:
    latent: np.ndarray
    trace: list
    masked_cd: float
    ok: bool
    seed: int


def masked_cd(decoder: Decoder, latent, sk: VectorSketch, mask: ObservationMask) -> float:
    """CD between the decode on the observed rows and the observed input."""
    grid = build_sample_grid(sk.n_points, sk.n_strokes)
    rows = mask.rows(grid)
    out = decode(decoder, latent, grid).points[rows]
    return chamfer(out, points_at_times(sk, grid.t[rows]))


def invert(decoder: Decoder, sk: VectorSketch, mask: ObservationMask | None = None,
           seed: int = 0, cfg: InvertConfig = InvertConfig(), init=None) -> InversionResult:
    """Optimize a latent code for ``sk`` with the decoder held fixed.

    Only grid entries inside ``mask`` enter the loss.  The starting code is
    drawn from N(0, init_std^2) with ``seed`` unless ``init`` is given; it is
    the only source of randomness, so the seed selects the completion.
    """
    mask = mask or ObservationMask.full()
    frozen = decoder.frozen()
    rng = np.random.default_rng(seed)
    start = (np.asarray(init, np.float32) if init is not None
             else rng.normal(0.0, cfg.init_std, decoder.latent_dim).astype(np.float32))
    code = Tensor(start.reshape(1, -1).copy(), requires_grad=True, name="latent")
    target = masked_target(sk, mask, cfg.weights.gamma, cfg.resolution, cfg.composition)
    opt = Adam([({"latent": code}, cfg.lr)])
    joint = int(round(cfg.point_phase * cfg.steps))
    trace = []
    for step in range(cfg.steps):
        if step == joint and step > 0:
            opt.reset()
            opt.scale_lr(cfg.joint_lr_scale)
        opt.zero_grad()
        rows_latent = ag.getitem(code, np.zeros(1, dtype=np.int64))
        loss, _, _ = objective(frozen, rows_latent, [target], cfg.weights, cfg.resolution,
                               visual=step >= joint, measure=False)
        value = loss.item()
        trace.append(value)
        if not np.isfinite(value):
            raise InversionDiverged(trace)
        ag.backward(loss)
        try:
            opt.step()
        except DivergenceError:
            raise InversionDiverged(trace) from None
    latent = code.data[0].copy()
    cd = masked_cd(decoder, latent, sk, mask)
    ok = cd <= cfg.tolerance
    if not ok:
        log.warning("inversion of sketch %s (seed %d): masked CD %.4f above tolerance %.4f",
                    sk.sketch_id, seed, cd, cfg.tolerance)
    return InversionResult(latent, trace, cd, ok, seed)


def complete(decoder: Decoder, latent, J: int, K: int) -> VectorSketch:
    """Decode the whole grid from an inverted code."""
    return decode(decoder, latent, build_sample_grid(J, K))


def latent_walk(v1, v2, delta: float) -> np.ndarray:
    """(1 - delta) * v1 + delta * v2 for delta in [0, 1]."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"walk position {delta} outside [0, 1] (extrapolation not supported)")
    v1 = np.asarray(v1, dtype=np.float32)
    v2 = np.asarray(v2, dtype=np.float32)
    if v1.shape != v2.shape:
        raise ValueError(f"latent shapes differ: {v1.shape} vs {v2.shape}")
    if delta == 0.0:
        return v1.copy()
    if delta == 1.0:
        return v2.copy()
    return (np.float32(1.0 - delta) * v1 + np.float32(delta) * v2).astype(np.float32)


def walk_curve(decoder: Decoder, v1, v2, J: int, K: int, step: float = 0.02):
    """Decodes along the walk and the CD between consecutive decodes.

    Returns ``(deltas, sketches, step_cds)`` with ``len(step_cds) == len(deltas) - 1``.
    """
    n = int(round(1.0 / step))
    deltas = [i / n for i in range(n + 1)]
    grid = build_sample_grid(J, K)
    sketches = [decode(decoder, latent_walk(v1, v2, d), grid) for d in deltas]
    cds = [chamfer(a.points, b.points) for a, b in zip(sketches, sketches[1:])]
    return deltas, sketches, cds
