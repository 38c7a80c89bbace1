"""Raster-conditioned VAE over the latent space of a frozen decoder.

A small convolutional encoder maps a 64x64 raster to a diagonal Gaussian
(mu, log sigma^2) over z; a linear projection carries z into the decoder's
latent space.  Training minimizes the implicit loss of the decoded sketch
plus beta * KL(q(z) || N(0, I)), with the decoder weights untouched.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .codec import atomic_write, pack_encoder, unpack_encoder
from .losses import LossWeights, intensity_map
from .model import Decoder, build_sample_grid, decode
from .optim import Adam, DivergenceError
from .raster import rasterize
from .sketch import VectorSketch, points_at_times, resample_uniform
from .train import Target, _row_offsets, objective

log = logging.getLogger(__name__)

RASTER = 64
CHANNELS = (1, 16, 32, 64, 64)


class Encoder:
    """Four stride-2 3x3 convolutions, then two dense layers to (mu, log var).

    ``proj_w``/``proj_b`` map z to the decoder's latent space.
    """

    def __init__(self, arrays: list[np.ndarray], d: int, hidden: int, size: int = RASTER):
        self.d, self.hidden, self.size = d, hidden, size
        self.tensors = [Tensor(np.asarray(a, np.float32), requires_grad=True) for a in arrays]

    @staticmethod
    def shapes(d: int, hidden: int, size: int = RASTER) -> list[tuple]:
        out = []
        for cin, cout in zip(CHANNELS[:-1], CHANNELS[1:]):
            out += [(cout, cin, 3, 3), (cout,)]
        flat = CHANNELS[-1] * (size // 16) ** 2
        out += [(flat, hidden), (hidden,), (hidden, 2 * d), (2 * d,), (d, d), (d,)]
        return out

    @classmethod
    def create(cls, d: int = 64, hidden: int = 256, size: int = RASTER, rng=None) -> "Encoder":
        if size % 16:
            raise ValueError("raster size must be a multiple of 16")
        rng = np.random.default_rng(rng)
        arrays = []
        for shape in cls.shapes(d, hidden, size):
            if len(shape) == 1:
                arrays.append(np.zeros(shape))
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                arrays.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), shape))
        # start near the prior: small mean head, identity projection
        arrays[-4] *= 0.1
        arrays[-2] = np.eye(d)
        return cls(arrays, d, hidden, size)

    def params(self) -> dict[str, Tensor]:
        return {f"E{i}": t for i, t in enumerate(self.tensors)}

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors]

    def forward(self, images) -> tuple[Tensor, Tensor]:
        """(B, H, W) rasters in [0, 1] -> (mu, log var), each (B, d)."""
        x = np.asarray(images, np.float32)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.size, self.size):
            raise ValueError(f"encoder expects {self.size}x{self.size} rasters, got {x.shape[1:]}")
        h = Tensor(x[:, None])
        t = self.tensors
        for i in range(4):
            h = ag.silu(ag.conv2d(h, t[2 * i], t[2 * i + 1], stride=2, pad=1))
        h = ag.reshape(h, (x.shape[0], -1))
        h = ag.silu(ag.matmul(h, t[8]) + t[9])
        out = ag.matmul(h, t[10]) + t[11]
        return ag.getitem(out, (slice(None), slice(0, self.d))), ag.getitem(out, (slice(None), slice(self.d, None)))

    def project(self, z: Tensor) -> Tensor:
        return ag.matmul(z, self.tensors[12]) + self.tensors[13]


def kl_divergence(mu, logvar):
    """KL(N(mu, diag exp(logvar)) || N(0, I)) per row, summed over dimensions."""
    mu, logvar = ag.as_tensor(mu), ag.as_tensor(logvar)
    return ag.sum_(mu * mu + ag.exp(logvar) - logvar - 1.0, axis=-1) * 0.5


def reparameterize(mu, logvar, eps, sigma_zero: bool = False):
    """z = mu + sigma * eps with sigma = exp(logvar / 2); ``sigma_zero`` returns mu."""
    mu = ag.as_tensor(mu)
    if sigma_zero:
        return mu
    sigma = ag.exp(ag.as_tensor(logvar) * 0.5)
    return mu + sigma * Tensor(np.asarray(eps, mu.dtype))


@dataclass
class Encoding:
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    latent: np.ndarray


def encode_vae(enc: Encoder, img, rng=None, eps=None, sigma_zero: bool = False) -> Encoding:
    """Encode one raster; noise comes from ``eps`` if given, else from ``rng``."""
    with ag.no_grad():
        mu, logvar = enc.forward(np.asarray(img)[None])
        if eps is None:
            eps = np.random.default_rng(rng).standard_normal(mu.shape)
        z = reparameterize(mu, logvar, np.reshape(eps, mu.shape), sigma_zero)
        v = enc.project(z)
    sigma = np.exp(0.5 * logvar.data[0])
    return Encoding(mu.data[0].copy(), sigma, z.data[0].copy(), v.data[0].copy())


# raster I/O ------------------------------------------------------------------

def load_raster(path, size: int = RASTER) -> np.ndarray:
    """Grayscale PNG -> (size, size) ink image in [0, 1].

    Light-background images (mean above one half) are inverted so that ink is
    always high.  Downsampling uses a max filter so thin strokes survive.
    """
    from PIL import Image
    img = Image.open(path).convert("L")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.mean() > 0.5:
        arr = 1.0 - arr
    out = Image.fromarray((arr * 255).astype(np.uint8))
    if out.size != (size, size):
        if min(out.size) > size:
            from PIL import ImageFilter
            k = max(3, (min(out.size) // size) | 1)
            out = out.filter(ImageFilter.MaxFilter(k))
        out = out.resize((size, size), Image.BILINEAR)
    return np.clip(np.asarray(out, dtype=np.float32) / 255.0, 0.0, 1.0)


def save_png(path, img: np.ndarray):
    from PIL import Image
    import io
    buf = io.BytesIO()
    Image.fromarray((np.clip(img, 0, 1) * 255).round().astype(np.uint8), mode="L").save(buf, "PNG")
    atomic_write(path, buf.getvalue())


def save_encoder(path, enc: Encoder):
    atomic_write(path, pack_encoder(enc.arrays(), enc.d, enc.hidden, enc.size))


def load_encoder(path) -> Encoder:
    (d, hidden, size), arrays = unpack_encoder(Path(path).read_bytes(), Encoder.shapes)
    return Encoder(arrays, d, hidden, size)


# training --------------------------------------------------------------------

class VAEDiverged(DivergenceError):
    def __init__(self, step, trace):
        super().__init__(f"VAE training diverged at step {step}; loss trace tail "
                         f"{[round(x, 5) for x in trace[-5:]]}")
        self.trace = trace


@dataclass(frozen=True)
class VAEConfig:
    hidden: int = 256
    batch_size: int = 16
    steps: int = 3000
    lr: float = 3e-4
    weights: LossWeights = field(default_factory=LossWeights)
    resolution: int = 64
    composition: str = "max"
    point_phase: float = 0.75
    joint_lr_scale: float = 0.01
    seed: int = 0
    log_every: int = 100


def _vae_target(sk: VectorSketch, cfg: VAEConfig) -> Target:
    grid = build_sample_grid(sk.n_points, sk.n_strokes)
    gt_map = intensity_map(resample_uniform(sk, sk.n_points), None, cfg.weights.gamma,
                           (cfg.resolution,) * 2, cfg.composition)
    return Target(grid, points_at_times(sk, grid.t), gt_map, np.arange(grid.J),
                  _row_offsets(grid.stroke_index))


def train_vae(decoder: Decoder, sketches: list[VectorSketch], cfg: VAEConfig = VAEConfig(),
              enc: Encoder | None = None, images=None):
    """Fit an encoder through the frozen ``decoder``; returns (encoder, history).

    ``images`` defaults to 64x64 rasters of ``sketches``.
    """
    if not sketches:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    frozen = decoder.frozen()
    enc = enc or Encoder.create(decoder.latent_dim, cfg.hidden, RASTER, rng)
    if enc.d != decoder.latent_dim:
        raise ValueError(f"encoder dimension {enc.d} does not match decoder dimension {decoder.latent_dim}")
    if images is None:
        images = np.stack([rasterize(sk, enc.size, enc.size) for sk in sketches])
    targets = [_vae_target(sk, cfg) for sk in sketches]
    opt = Adam([(enc.params(), cfg.lr)])
    joint = int(round(cfg.point_phase * cfg.steps))
    history, trace = [], []
    for step in range(cfg.steps):
        if step == joint and step > 0:
            opt.reset()
            opt.scale_lr(cfg.joint_lr_scale)
        batch = np.sort(rng.choice(len(sketches), size=min(cfg.batch_size, len(sketches)), replace=False))
        opt.zero_grad()
        mu, logvar = enc.forward(images[batch])
        z = reparameterize(mu, logvar, rng.standard_normal(mu.shape))
        v = enc.project(z)
        logged = (step + 1) % cfg.log_every == 0 or step + 1 == cfg.steps
        rec, lv, lm = objective(frozen, v, [targets[i] for i in batch], cfg.weights,
                                cfg.resolution, visual=step >= joint, measure=logged)
        kl = ag.mean(kl_divergence(mu, logvar))
        loss = rec + kl * cfg.weights.beta
        value = loss.item()
        trace.append(value)
        if not np.isfinite(value):
            raise VAEDiverged(step, trace)
        ag.backward(loss)
        try:
            opt.step()
        except DivergenceError:
            raise VAEDiverged(step, trace) from None
        row = {"step": step + 1, "loss": value, "loss_V": lv, "loss_MSE": lm, "kl": kl.item()}
        history.append(row)
        if (step + 1) % cfg.log_every == 0:
            log.info("vae step %d loss %.4f (V %.4f, MSE %.5f, KL %.3f)", step + 1, value, lv, lm, row["kl"])
    return enc, history


# sampling --------------------------------------------------------------------

def sample_unconditional(enc: Encoder, decoder: Decoder, seed: int, J: int | None = None,
                         K: int | None = None, eps=None) -> VectorSketch:
    """Decode a prior draw; J and K default to draws from [100, 300] and [10, 30]."""
    rng = np.random.default_rng(seed)
    J = int(rng.integers(100, 301)) if J is None else J
    K = int(rng.integers(10, 31)) if K is None else K
    z = rng.standard_normal(enc.d).astype(np.float32) if eps is None else np.asarray(eps, np.float32)
    with ag.no_grad():
        v = enc.project(Tensor(z.reshape(1, -1))).data[0]
    return decode(decoder, v, build_sample_grid(J, K))


def vectorize(enc: Encoder, decoder: Decoder, img, n_variants: int = 1, J: int = 64, K: int = 1,
              seed: int = 0, sigma_zero: bool = False) -> list[VectorSketch]:
    """Vector decodes of a raster from independent posterior draws."""
    rng = np.random.default_rng(seed)
    grid = build_sample_grid(J, K)
    out = []
    for _ in range(n_variants):
        e = encode_vae(enc, img, rng=rng, sigma_zero=sigma_zero)
        out.append(decode(decoder, e.latent, grid))
    return out
