"""Auto-decoder training: shared decoder plus one latent code per sketch."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .codec import reconstruction_cd, save_latents, save_model
from .losses import IntensityMap, LossWeights, gamma_schedule, intensity_map, mse_loss, visual_loss
from .model import Decoder, SampleGrid, build_sample_grid
from .optim import Adam, DivergenceError
from .sketch import VectorSketch, points_at_times, resample_uniform

log = logging.getLogger(__name__)


class TrainingDiverged(DivergenceError):
    def __init__(self, step, last_finite, msg="non-finite loss"):
        super().__init__(f"{msg} at step {step} (last finite loss {last_finite})")
        self.step = step
        self.last_finite = last_finite


@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int = 64
    L: int = 8
    width: int = 512
    depth: int = 8
    activation: str = "silu"
    batch_size: int = 16
    steps: int = 2000
    lr_decoder: float = 1e-4
    lr_latent: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    augment: float = 0.5
    gamma_schedule: bool = False
    gamma_interval: int = 100
    resolution: int = 64
    composition: str = "max"
    latent_std: float = 0.01
    local_time: bool = False
    seed: int = 0
    log_every: int = 100
    cd_sample: int = 8
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    max_latent_norm: float = 100.0
    targets: str = "time"  # "time": one t -> position map for every J; "resample": per-J floor partition
    map_source: str = "reference"  # "reference": map of the N-point resample; "raw": map of the input polyline
    # Training runs in two phases: the point term alone for the first
    # ``point_phase`` fraction of steps, then the full objective with both
    # learning rates multiplied by ``joint_lr_scale`` and fresh Adam moments.
    # point_phase=0 trains on the full objective from the first step.
    point_phase: float = 0.75
    joint_lr_scale: float = 0.01

    def __post_init__(self):
        for name in ("latent_dim", "L", "width", "depth", "batch_size", "steps", "resolution"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if min(self.lr_decoder, self.lr_latent) <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.augment < 1:
            raise ValueError("augment fraction must lie in [0, 1)")
        if not 0 <= self.point_phase <= 1:
            raise ValueError("point_phase must lie in [0, 1]")
        if self.targets not in ("time", "resample") or self.map_source not in ("reference", "raw"):
            raise ValueError("unknown target or map source mode")

    @property
    def joint_start(self) -> int:
        return int(round(self.point_phase * self.steps))


def augment_grid(J_gt: int, K_gt: int, frac: float, rng, min_points: int = 1,
                 max_tries: int = 100) -> tuple[int, int]:
    """Draw (J, K) within +-frac of the ground truth; draws with J < K are redrawn."""
    if not 0 <= frac < 1:
        raise ValueError("augment fraction must lie in [0, 1)")
    if frac == 0:
        return J_gt, K_gt
    for _ in range(max_tries):
        J = int(round(rng.uniform(J_gt * (1 - frac), J_gt * (1 + frac))))
        K = max(1, int(round(rng.uniform(K_gt * (1 - frac), K_gt * (1 + frac)))))
        if J >= max(K, min_points):
            return J, K
    return J_gt, K_gt


@dataclass
class LatentTable:
    ids: list
    codes: Tensor

    def __getitem__(self, sketch_id):
        return self.codes.data[self.ids.index(sketch_id)]

    def as_dict(self):
        return {i: self.codes.data[k] for k, i in enumerate(self.ids)}

    @classmethod
    def init(cls, ids, dim, std, rng):
        codes = rng.normal(0.0, std, (len(ids), dim)).astype(np.float32)
        return cls(list(ids), Tensor(codes, requires_grad=True, name="latents"))


@dataclass
class Target:
    """One sketch prepared for a loss evaluation."""

    grid: SampleGrid
    points: np.ndarray  # targets aligned with the grid rows in ``rows``
    gt_map: IntensityMap
    rows: np.ndarray  # grid rows that enter the loss
    offsets: np.ndarray  # stroke starts within ``rows``


def _row_offsets(stroke_index: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.r_[True, np.diff(stroke_index) != 0])


def make_target(sk: VectorSketch, J: int, K: int, gamma: float, resolution: int,
                composition: str = "max", gt_map=None, local_time=False,
                mode: str = "time") -> Target:
    grid = build_sample_grid(J, K, local_time=local_time)
    if mode == "time" and not local_time:
        pts = points_at_times(sk, grid.t)
    else:
        pts = resample_uniform(sk, J).points
    if gt_map is None:
        gt_map = intensity_map(resample_uniform(sk, sk.n_points), None, gamma,
                               (resolution, resolution), composition)
    rows = np.arange(J)
    return Target(grid, pts, gt_map, rows, _row_offsets(grid.stroke_index))


def objective(decoder: Decoder, latents: Tensor, targets: list[Target],
              weights: LossWeights, resolution: int, visual: bool = True, measure: bool = True):
    """Mean implicit loss over a batch; ``latents`` has one row per target.

    Returns (loss, mean visual term, mean point term).  With ``visual`` off the
    loss is the point term alone; the visual term is then still measured for
    logging unless ``measure`` is off too, in which case it is reported as nan.
    """
    L = decoder.L
    feats = np.concatenate([t.grid.features(L)[t.rows] for t in targets])
    sizes = [len(t.rows) for t in targets]
    which = np.repeat(np.arange(len(targets)), sizes)
    out = decoder.forward(ag.getitem(latents, which), feats)
    total = lv_sum = lm_sum = None
    start = 0
    for t, n in zip(targets, sizes):
        pred = ag.getitem(out, slice(start, start + n))
        start += n
        lm = mse_loss(pred, t.points)
        if visual:
            pm = intensity_map(pred, t.offsets, t.gt_map.gamma, (resolution, resolution),
                               t.gt_map.composition)
            lv = visual_loss(t.gt_map, pm)
            loss = lv + lm * weights.mse if weights.mse else lv
        elif measure:
            with ag.no_grad():
                pm = intensity_map(pred.data, t.offsets, t.gt_map.gamma, (resolution, resolution),
                                   t.gt_map.composition)
            lv = visual_loss(t.gt_map, pm)
            loss = lm
        else:
            lv = Tensor(np.array(np.nan))
            loss = lm
        total = loss if total is None else total + loss
        lv_sum = lv.item() + (lv_sum or 0.0)
        lm_sum = lm.item() + (lm_sum or 0.0)
    n = len(targets)
    return total * (1.0 / n), lv_sum / n, lm_sum / n


@dataclass
class FitResult:
    decoder: Decoder
    latents: LatentTable
    history: list = field(default_factory=list)

    @property
    def final_cd(self):
        cds = [h["mean_CD_sampled"] for h in self.history if h["mean_CD_sampled"] == h["mean_CD_sampled"]]
        return cds[-1] if cds else float("nan")


def _mean_cd(decoder, table, sketches, rng, n):
    idx = rng.choice(len(sketches), size=min(n, len(sketches)), replace=False)
    return float(np.mean([reconstruction_cd(decoder, table.codes.data[i], sketches[i]) for i in idx]))


def fit_dataset(sketches: list[VectorSketch], cfg: TrainConfig = TrainConfig(),
                log_path=None, decoder: Decoder | None = None) -> FitResult:
    """Jointly optimize decoder weights and the latent table."""
    if not sketches:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    eval_rng = np.random.default_rng(cfg.seed + 1)
    if decoder is None:
        decoder = Decoder.create(cfg.latent_dim, cfg.L, cfg.depth, cfg.width, cfg.activation, rng)
    ids = [sk.sketch_id if sk.sketch_id is not None else i for i, sk in enumerate(sketches)]
    if len(set(ids)) != len(ids):
        raise ValueError("sketch ids must be unique")
    table = LatentTable.init(ids, cfg.latent_dim, cfg.latent_std, rng)
    opt = Adam([(decoder.params(), cfg.lr_decoder), ({"latents": table.codes}, cfg.lr_latent)])
    gt_maps: dict = {}
    map_gamma = None
    history = []
    last_finite = None
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_total", "loss_V", "loss_MSE", "gamma", "mean_CD_sampled"])
    try:
        for step in range(cfg.steps):
            gamma = (gamma_schedule(step, cfg.steps, interval=cfg.gamma_interval)
                     if cfg.gamma_schedule else cfg.weights.gamma)
            batch = rng.choice(len(sketches), size=min(cfg.batch_size, len(sketches)), replace=False)
            batch.sort()
            targets = []
            for i in batch:
                sk = sketches[i]
                J, K = augment_grid(sk.n_points, sk.n_strokes, cfg.augment, rng, min_points=sk.n_strokes)
                if gamma != map_gamma:  # the schedule moved: old maps are stale
                    gt_maps, map_gamma = {}, gamma
                if i not in gt_maps:
                    src = resample_uniform(sk, sk.n_points) if cfg.map_source == "reference" else sk
                    gt_maps[i] = intensity_map(src, None, gamma, (cfg.resolution,) * 2, cfg.composition)
                targets.append(make_target(sk, J, K, gamma, cfg.resolution, cfg.composition,
                                           gt_maps[i], cfg.local_time, cfg.targets))
            if step == cfg.joint_start and step > 0:
                opt.reset()
                opt.scale_lr(cfg.joint_lr_scale)
            opt.zero_grad()
            lat = ag.getitem(table.codes, batch)
            logged = (step + 1) % cfg.log_every == 0 or step + 1 == cfg.steps
            loss, lv, lm = objective(decoder, lat, targets, cfg.weights, cfg.resolution,
                                     visual=step >= cfg.joint_start, measure=logged)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(step, last_finite)
            last_finite = value
            ag.backward(loss)
            try:
                opt.step()
            except DivergenceError as exc:
                raise TrainingDiverged(step, last_finite, str(exc)) from None
            norms = np.linalg.norm(table.codes.data, axis=1)
            if norms.max() > cfg.max_latent_norm:
                raise TrainingDiverged(step, last_finite, f"latent norm {norms.max():.1f} out of bounds")
            cd = float("nan")
            if logged:
                cd = _mean_cd(decoder, table, sketches, eval_rng, cfg.cd_sample)
                log.info("step %d loss %.4f (V %.4f, MSE %.5f) gamma %.0f CD %.4f",
                         step + 1, value, lv, lm, gamma, cd)
            row = {"step": step + 1, "loss_total": value, "loss_V": lv, "loss_MSE": lm,
                   "gamma": gamma, "mean_CD_sampled": cd}
            history.append(row)
            if writer:
                writer.writerow([row["step"], f"{value:.6g}", "" if lv != lv else f"{lv:.6g}", f"{lm:.6g}",
                                 f"{gamma:g}", "" if cd != cd else f"{cd:.6g}"])
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and cfg.checkpoint_dir:
                ck = Path(cfg.checkpoint_dir)
                ck.mkdir(parents=True, exist_ok=True)
                save_model(ck / f"model_step{step + 1}.bin", decoder)
                save_latents(ck / f"latents_step{step + 1}.bin", table.ids, table.codes.data)
    finally:
        if fh:
            fh.close()
    return FitResult(decoder, table, history)


def fit_single(sk: VectorSketch, cfg: TrainConfig = TrainConfig(), log_path=None):
    """Fit one sketch; returns (decoder, latent code, FitResult)."""
    cfg = replace(cfg, batch_size=1, cd_sample=1)
    res = fit_dataset([sk], cfg, log_path)
    return res.decoder, res.latents.codes.data[0].copy(), res
