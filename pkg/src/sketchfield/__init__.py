"""Implicit neural representations of vector sketches.

A shared coordinate decoder maps (latent, time stamp, stroke stamp) queries to
pen positions; each sketch is stored as one small latent code.
"""
__version__ = "0.1.0"

from .sketch import VectorSketch, SketchError, normalize, resample_uniform, rdp_simplify, storage_bytes
from .model import Decoder, SampleGrid, build_sample_grid, decode, decode_abstraction, positional_encode
from .losses import LossWeights, intensity_map, implicit_loss, mse_loss, visual_loss, gamma_schedule
from .train import TrainConfig, fit_dataset, fit_single, augment_grid
from .inversion import ObservationMask, InvertConfig, invert, complete, latent_walk
from .codec import chamfer, save_model, load_model, save_latents, load_latents

__all__ = [
    "VectorSketch", "SketchError", "normalize", "resample_uniform", "rdp_simplify", "storage_bytes",
    "Decoder", "SampleGrid", "build_sample_grid", "decode", "decode_abstraction", "positional_encode",
    "LossWeights", "intensity_map", "implicit_loss", "mse_loss", "visual_loss", "gamma_schedule",
    "TrainConfig", "fit_dataset", "fit_single", "augment_grid",
    "ObservationMask", "InvertConfig", "invert", "complete", "latent_walk",
    "chamfer", "save_model", "load_model", "save_latents", "load_latents",
]
