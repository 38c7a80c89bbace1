"""Model / latent containers, Chamfer distance and the rate-distortion harness.

Container layouts (little-endian):

ModelFile   "SINR" u16 version, u16 activation id, u32 d, u32 L, u32 depth,
            u32 width, f16 weights layer by layer (W as (in, out) row-major,
            then bias), 8-byte blake2b checksum of the payload.
LatentFile  "SLAT" u16 version, u32 count, u32 dim, count x u64 ids,
            count x dim f16 values row-major, 8-byte checksum of everything
            between the magic and the checksum.
VAE file    "SVAE" u16 version, u32 d, u32 hidden, u32 raster size, then the
            encoder arrays as f16 in a fixed order, 8-byte checksum.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .model import ACTIVATIONS, Decoder, build_sample_grid, decode
from .autograd import Tensor
from .sketch import VectorSketch, rdp_simplify, resample_uniform, storage_bytes

log = logging.getLogger(__name__)

MODEL_MAGIC = b"SINR"
LATENT_MAGIC = b"SLAT"
VAE_MAGIC = b"SVAE"
VERSION = 1
_ACT_NAMES = {v: k for k, v in ACTIVATIONS.items()}


class CodecError(ValueError):
    pass


class ChecksumError(CodecError):
    pass


class VersionError(CodecError):
    pass


def _digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _check_frame(buf: bytes, magic: bytes, head_size: int, what: str):
    if len(buf) < 4 + 2 or buf[:4] != magic:
        raise CodecError(f"not a {what} file (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise VersionError(f"unsupported {what} file version {version} (expected {VERSION})")
    if len(buf) < head_size + 8:
        raise ChecksumError(f"{what} file truncated")


# model ---------------------------------------------------------------------

def encode_model(decoder: Decoder) -> bytes:
    head = MODEL_MAGIC + struct.pack("<HHIIII", VERSION, ACTIVATIONS[decoder.activation],
                                     decoder.latent_dim, decoder.L, decoder.depth, decoder.width)
    parts = []
    for w, b in zip(decoder.weights, decoder.biases):
        parts.append(w.data.astype("<f2").tobytes())
        parts.append(b.data.astype("<f2").tobytes())
    payload = b"".join(parts)
    return head + payload + _digest(payload)


def decode_model(buf: bytes) -> Decoder:
    head_size = 4 + struct.calcsize("<HHIIII")
    _check_frame(buf, MODEL_MAGIC, head_size, "model")
    _, act, d, L, depth, width = struct.unpack_from("<HHIIII", buf, 4)
    if act not in _ACT_NAMES:
        raise CodecError(f"unknown activation id {act}")
    sizes = [d + 8 * L] + [width] * (depth - 1) + [2]
    n_values = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    end = head_size + 2 * n_values
    if len(buf) != end + 8:
        raise ChecksumError(f"model file size {len(buf)} does not match header (expected {end + 8})")
    payload = buf[head_size:end]
    if _digest(payload) != buf[end:]:
        raise ChecksumError("model checksum mismatch")
    vals = np.frombuffer(payload, "<f2").astype(np.float32)
    ws, bs, pos = [], [], 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        ws.append(Tensor(vals[pos:pos + i * o].reshape(i, o).copy(), requires_grad=True))
        pos += i * o
        bs.append(Tensor(vals[pos:pos + o].copy(), requires_grad=True))
        pos += o
    return Decoder(ws, bs, d, L, _ACT_NAMES[act])


def save_model(path, decoder: Decoder):
    atomic_write(path, encode_model(decoder))


def load_model(path) -> Decoder:
    return decode_model(Path(path).read_bytes())


# latents -------------------------------------------------------------------

_LAT_HEAD = 4 + struct.calcsize("<HII")


def latent_file_size(count: int, dim: int) -> int:
    """Header + ids + half-float values + checksum, in bytes."""
    return _LAT_HEAD + 8 * count + 2 * count * dim + 8


def encode_latents(ids, values) -> bytes:
    values = np.asarray(values, dtype=np.float32)
    ids = np.asarray(ids, dtype="<u8")
    if values.ndim != 2 or len(ids) != len(values):
        raise CodecError("latents must be (count, dim) with one id per row")
    body = struct.pack("<HII", VERSION, len(values), values.shape[1]) + ids.tobytes() \
        + values.astype("<f2").tobytes()
    return LATENT_MAGIC + body + _digest(body)


def decode_latents(buf: bytes):
    _check_frame(buf, LATENT_MAGIC, _LAT_HEAD, "latent")
    _, n, d = struct.unpack_from("<HII", buf, 4)
    if len(buf) != latent_file_size(n, d):
        raise ChecksumError(f"latent file size {len(buf)} does not match header "
                            f"(expected {latent_file_size(n, d)})")
    if _digest(buf[4:-8]) != buf[-8:]:
        raise ChecksumError("latent checksum mismatch")
    ids = np.frombuffer(buf, "<u8", n, _LAT_HEAD).astype(np.int64)
    vals = np.frombuffer(buf, "<f2", n * d, _LAT_HEAD + 8 * n).reshape(n, d).astype(np.float32)
    return ids, vals


def save_latents(path, ids, values):
    atomic_write(path, encode_latents(ids, values))


def load_latents(path):
    return decode_latents(Path(path).read_bytes())


# VAE -----------------------------------------------------------------------

def pack_encoder(arrays: list[np.ndarray], d: int, hidden: int, size: int) -> bytes:
    head = VAE_MAGIC + struct.pack("<HIII", VERSION, d, hidden, size)
    payload = b"".join(a.astype("<f2").tobytes() for a in arrays)
    return head + payload + _digest(payload)


def unpack_encoder(buf: bytes, shapes_for):
    """``shapes_for(d, hidden, size)`` returns the list of array shapes to read."""
    head_size = 4 + struct.calcsize("<HIII")
    _check_frame(buf, VAE_MAGIC, head_size, "VAE")
    _, d, hidden, size = struct.unpack_from("<HIII", buf, 4)
    shapes = shapes_for(d, hidden, size)
    n = sum(int(np.prod(s)) for s in shapes)
    end = head_size + 2 * n
    if len(buf) != end + 8:
        raise ChecksumError("VAE file size does not match header")
    payload = buf[head_size:end]
    if _digest(payload) != buf[end:]:
        raise ChecksumError("VAE checksum mismatch")
    vals = np.frombuffer(payload, "<f2").astype(np.float32)
    out, pos = [], 0
    for s in shapes:
        k = int(np.prod(s))
        out.append(vals[pos:pos + k].reshape(s).copy())
        pos += k
    return (d, hidden, size), out


# metrics ---------------------------------------------------------------------

def chamfer(a, b) -> float:
    """Symmetric mean nearest-neighbour Euclidean distance, halved per side."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return 0.5 * float(da.mean()) + 0.5 * float(db.mean())


def reconstruction_cd(decoder: Decoder, latent, sk: VectorSketch, K: int | None = None) -> float:
    """CD between the decode at (N, K) and the ground truth resampled to N points."""
    n = sk.n_points
    k = sk.n_strokes if K is None else K
    n = max(n, k, sk.n_strokes)
    out = decode(decoder, latent, build_sample_grid(n, k))
    return chamfer(out.points, resample_uniform(sk, n).points)


# rate-distortion -------------------------------------------------------------

@dataclass(frozen=True)
class RateDistortionPoint:
    label: str
    setting: str
    bytes_per_sketch: float
    cd: float


def _raster_points(sk, size):
    from .raster import rasterize
    img = rasterize(sk, size, size)
    rc = np.argwhere(img > 0)
    return np.column_stack([rc[:, 1], rc[:, 0]]) / max(size - 1, 1)


def rate_distortion_sweep(sketches, models=None, rdp_eps=(0.0, 0.005, 0.01, 0.02, 0.05),
                          raster_sizes=(256, 128, 64, 32, 16), dims=None):
    """One point per representation setting, averaged over ``sketches``.

    ``models`` maps latent dim D to ``(decoder, latents)`` where ``latents``
    maps sketch id to its code; dims listed in ``dims`` but absent from
    ``models`` are skipped with a warning.  Decoder bytes are excluded from
    every per-sketch figure (shared across the dataset).
    """
    models = models or {}
    points = []
    gt = {sk.sketch_id: resample_uniform(sk, sk.n_points).points for sk in sketches}
    for D in (dims if dims is not None else sorted(models)):
        if D not in models:
            log.warning("no model for latent dim %s; skipping", D)
            continue
        dec, lat = models[D]
        cds = [chamfer(decode(dec, lat[sk.sketch_id], build_sample_grid(sk.n_points, sk.n_strokes)).points,
                       gt[sk.sketch_id]) for sk in sketches]
        points.append(RateDistortionPoint("inr-latent", f"D={D}",
                                          float(storage_bytes(sketches[0], "inr-latent", dim=D)),
                                          float(np.mean(cds))))
    for eps in rdp_eps:
        nb, cds = [], []
        for sk in sketches:
            simp = rdp_simplify(sk, eps)
            nb.append(storage_bytes(simp, "vector16"))
            cds.append(chamfer(resample_uniform(simp, sk.n_points).points, gt[sk.sketch_id]))
        points.append(RateDistortionPoint("vector16", f"rdp={eps:g}", float(np.mean(nb)), float(np.mean(cds))))
    for size in raster_sizes:
        cds, sparse = [], []
        for sk in sketches:
            cds.append(chamfer(_raster_points(sk, size), gt[sk.sketch_id]))
            sparse.append(storage_bytes(sk, "sparse-binary-raster", size=(size, size)))
        cd = float(np.mean(cds))
        points.append(RateDistortionPoint("binary-raster", f"{size}x{size}",
                                          float(storage_bytes(sketches[0], "binary-raster", size=(size, size))), cd))
        points.append(RateDistortionPoint("sparse-binary-raster", f"{size}x{size}", float(np.mean(sparse)), cd))
    return points


def write_rd_csv(path, points):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["representation", "setting", "bytes_per_sketch", "chamfer"])
        for p in points:
            w.writerow([p.label, p.setting, f"{p.bytes_per_sketch:.2f}", f"{p.cd:.6f}"])
    os.replace(tmp, path)


def plot_rd(path, points):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 4))
    for label in dict.fromkeys(p.label for p in points):
        pts = sorted((p.bytes_per_sketch, p.cd) for p in points if p.label == label)
        ax.plot(*zip(*pts), "o-", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("bytes per sketch (decoder weights excluded)")
    ax.set_ylabel("Chamfer distance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
