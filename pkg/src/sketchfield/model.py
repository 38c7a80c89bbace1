"""Conditional implicit sketch function: (latent, t, dt, s, ds) -> (x, y)."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .sketch import SketchError, VectorSketch, stroke_point_counts

ACTIVATIONS = {"silu": 0, "relu": 1, "tanh": 2}
_ACT_FN = {"silu": ag.silu, "relu": ag.relu, "tanh": ag.tanh}

# Time and stroke stamps live in [0, 1), where every frequency of the encoding
# is <= 1 and the features barely vary.  Stamps are expressed in thousandths
# before encoding, which spreads the frequencies over 0.1..316 rad per unit.
STAMP_SCALE = 1000.0

# Rows are evaluated in zero-padded blocks of this many entries at inference, so
# each entry's arithmetic never depends on how a request was batched.
DECODE_BLOCK = 256


def frequencies(L: int) -> np.ndarray:
    """10^(-4k/L) for k = 1..L (decreasing, all <= 1)."""
    k = np.arange(1, L + 1, dtype=np.float64)
    return 10.0 ** (-4.0 * k / L)


def positional_encode(x, L: int) -> np.ndarray:
    """[sin(w1 x), cos(w1 x), ..., sin(wL x), cos(wL x)]; scalar or 1-d input."""
    x = np.asarray(x, dtype=np.float64)
    ang = x[..., None] * frequencies(L)
    out = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return out.reshape(*x.shape, 2 * L)


@dataclass(frozen=True)
class SampleGrid:
    t: np.ndarray
    dt: float
    s: np.ndarray
    ds: float
    stroke_sizes: np.ndarray

    @property
    def J(self) -> int:
        return len(self.t)

    @property
    def K(self) -> int:
        return len(self.stroke_sizes)

    @property
    def stroke_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.K), self.stroke_sizes)

    @property
    def stroke_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.stroke_sizes)[:-1]])

    @property
    def pen(self) -> np.ndarray:
        """Pen-up on the last entry of each run of equal strokestamps."""
        pen = np.zeros(self.J, dtype=np.int8)
        pen[np.cumsum(self.stroke_sizes) - 1] = 1
        return pen

    def features(self, L: int, scale: float = STAMP_SCALE) -> np.ndarray:
        """(J, 8L) decoder inputs: PE of t, dt, s, ds with stamps multiplied by ``scale``."""
        J = self.J
        cols = [positional_encode(scale * self.t, L),
                np.broadcast_to(positional_encode(scale * self.dt, L), (J, 2 * L)),
                positional_encode(scale * self.s, L),
                np.broadcast_to(positional_encode(scale * self.ds, L), (J, 2 * L))]
        return np.concatenate(cols, axis=1)


def build_sample_grid(J: int, K: int, local_time: bool = False) -> SampleGrid:
    """J global timestamps spread over K strokes.

    ``local_time`` restarts t at 0 inside each stroke (ablation only).
    """
    sizes = stroke_point_counts(J, K)
    stroke = np.repeat(np.arange(K), sizes)
    if local_time:
        pos = np.arange(J) - np.repeat(np.concatenate([[0], np.cumsum(sizes)[:-1]]), sizes)
        t = pos / np.repeat(sizes, sizes)
        dt = 1.0 / float(np.max(sizes))
    else:
        t = np.arange(J) / J
        dt = 1.0 / J
    return SampleGrid(t=t, dt=dt, s=stroke / K, ds=1.0 / K, stroke_sizes=sizes)


class Decoder:
    """Plain MLP, ``depth`` linear layers, sigmoid output in [0, 1]^2."""

    def __init__(self, weights, biases, latent_dim, L, activation="silu"):
        self.weights = list(weights)
        self.biases = list(biases)
        self.latent_dim = latent_dim
        self.L = L
        self.activation = activation

    @classmethod
    def create(cls, latent_dim=64, L=8, depth=8, width=512, activation="silu", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if depth < 2:
            raise ValueError("depth must be at least 2")
        rng = np.random.default_rng(rng)
        sizes = [latent_dim + 8 * L] + [width] * (depth - 1) + [2]
        ws, bs = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = 1.0 if i == len(sizes) - 2 else np.sqrt(2.0)
            w = rng.normal(0.0, gain / np.sqrt(fan_in), (fan_in, fan_out))
            ws.append(Tensor(w.astype(np.float32), requires_grad=True, name=f"W{i}"))
            bs.append(Tensor(np.zeros(fan_out, np.float32), requires_grad=True, name=f"b{i}"))
        return cls(ws, bs, latent_dim, L, activation)

    @property
    def depth(self):
        return len(self.weights)

    @property
    def width(self):
        return self.weights[0].shape[1]

    @property
    def in_features(self):
        return self.latent_dim + 8 * self.L

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def frozen(self) -> "Decoder":
        """Same weights (shared arrays) with gradients switched off."""
        return Decoder([Tensor(w.data) for w in self.weights], [Tensor(b.data) for b in self.biases],
                       self.latent_dim, self.L, self.activation)

    def astype(self, dtype) -> "Decoder":
        ws = [Tensor(w.data.astype(dtype), requires_grad=w.requires_grad) for w in self.weights]
        bs = [Tensor(b.data.astype(dtype), requires_grad=b.requires_grad) for b in self.biases]
        return Decoder(ws, bs, self.latent_dim, self.L, self.activation)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w.data).tobytes())
            h.update(np.ascontiguousarray(b.data).tobytes())
        return h.hexdigest()

    def forward(self, latents: Tensor, features) -> Tensor:
        """Differentiable forward; ``latents`` has one row per feature row."""
        if latents.shape[-1] != self.latent_dim:
            raise SketchError(f"latent dimension {latents.shape[-1]} does not match decoder "
                              f"dimension {self.latent_dim}")
        feats = Tensor(np.asarray(features, dtype=latents.dtype))
        h = ag.concat([latents, feats], axis=1)
        act = _ACT_FN[self.activation]
        last = self.depth - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ag.matmul(h, w) + b
            h = ag.sigmoid(h) if i == last else act(h)
        return h

    def forward_array(self, x: np.ndarray) -> np.ndarray:
        """Inference on a (rows, in_features) array, no graph recorded."""
        with ag.no_grad():
            return self.forward(Tensor(x[:, :self.latent_dim]), x[:, self.latent_dim:]).data

    def evaluate(self, latent_rows: np.ndarray, features: np.ndarray) -> np.ndarray:
        """Blocked inference; bit-identical for any ordering or batching of rows."""
        x = np.concatenate([np.asarray(latent_rows, np.float32),
                            np.asarray(features, np.float32)], axis=1)
        n = len(x)
        out = np.empty((n, 2), dtype=np.float32)
        block = np.zeros((DECODE_BLOCK, x.shape[1]), dtype=np.float32)
        for start in range(0, n, DECODE_BLOCK):
            chunk = x[start:start + DECODE_BLOCK]
            block[:] = 0
            block[:len(chunk)] = chunk
            out[start:start + len(chunk)] = self.forward_array(block)[:len(chunk)]
        return out


def _check_latent(decoder: Decoder, latent) -> np.ndarray:
    v = np.asarray(latent, dtype=np.float32).reshape(-1)
    if v.shape[0] != decoder.latent_dim:
        raise SketchError(f"latent dimension {v.shape[0]} does not match decoder "
                          f"dimension {decoder.latent_dim}")
    return v


def decode_entries(decoder: Decoder, latent, grid: SampleGrid, order=None) -> np.ndarray:
    """Raw (x, y) for grid entries ``order`` (all entries by default)."""
    v = _check_latent(decoder, latent)
    feats = grid.features(decoder.L)
    if order is not None:
        feats = feats[np.asarray(order)]
    return decoder.evaluate(np.broadcast_to(v, (len(feats), v.shape[0])), feats)


def decode(decoder: Decoder, latent, grid: SampleGrid) -> VectorSketch:
    """Decode every grid entry independently, then attach the pen states."""
    xy = np.clip(decode_entries(decoder, latent, grid), 0.0, 1.0)
    return VectorSketch(xy.astype(np.float64), grid.stroke_offsets)


def decode_abstraction(decoder: Decoder, latent, J: int, K: int) -> VectorSketch:
    return decode(decoder, latent, build_sample_grid(J, K))
