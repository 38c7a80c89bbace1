"""Command-line entry point: ``sketchfield <command> [options]``.

Every command accepts ``--config FILE`` (JSON object keyed by option name,
dashes or underscores); explicit flags override file values, which override
built-in defaults.  Each command that writes outputs also writes
``manifest.json`` (resolved options, version, seed) next to them.

Environment:
    SKETCHFIELD_THREADS  cap on BLAS threads
    SKETCHFIELD_CI       when set, train/invert/generate require --seed
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("sketchfield")

SEEDED = ("train", "invert", "generate")


class CLIError(Exception):
    pass


# helpers ---------------------------------------------------------------------

def _version() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                              cwd=Path(__file__).resolve().parent, capture_output=True,
                              text=True, timeout=5)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_text(path, text: str):
    from .codec import atomic_write
    atomic_write(path, text.encode())


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _write_text(path, buf.getvalue())


def _manifest(directory, args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    doc = {"command": args.command, "version": _version(), "seed": getattr(args, "seed", None),
           "config": cfg}
    _write_text(Path(directory) / "manifest.json", json.dumps(doc, indent=1, default=str) + "\n")


def _svg_or_png(sk, path):
    from .render import render_png, render_svg
    if str(path).lower().endswith(".png"):
        render_png(sk, path)
    else:
        render_svg(sk, path)


def _latent_by_id(path, sketch_id):
    from .codec import load_latents
    ids, vals = load_latents(path)
    hit = np.flatnonzero(ids == int(sketch_id))
    if len(hit) == 0:
        raise CLIError(f"id {sketch_id} not in latent file {path}")
    return vals[hit[0]]


def _load_sketches(path, fmt, unit_square=False):
    from .formats import load_dataset, load_stroke3
    p = Path(path)
    if p.is_dir():
        sks, _ = load_dataset(p, fmt, unit_square=unit_square)
        return sks
    return load_stroke3(p, fmt, unit_square=unit_square)


def _pick(sketches, index=None, sketch_id=None):
    if sketch_id is not None:
        for sk in sketches:
            if sk.sketch_id == sketch_id:
                return sk
        raise CLIError(f"no sketch with id {sketch_id}")
    if not 0 <= index < len(sketches):
        raise CLIError(f"sketch index {index} out of range (0..{len(sketches) - 1})")
    return sketches[index]


# commands --------------------------------------------------------------------

def cmd_train(args):
    from .codec import save_latents, save_model
    from .formats import load_dataset
    from .losses import LossWeights
    from .train import TrainConfig, fit_dataset
    sketches, manifest = load_dataset(args.data, args.format, unit_square=args.unit_square)
    if args.limit:
        sketches = sketches[:args.limit]
    out = _outdir(args.out)
    cfg = TrainConfig(latent_dim=args.latent_dim, L=args.frequencies, width=args.width, depth=args.depth,
                      activation=args.activation, batch_size=args.batch_size, steps=args.steps,
                      lr_decoder=args.lr_decoder, lr_latent=args.lr_latent,
                      weights=LossWeights(mse=args.lambda_mse, gamma=args.gamma, beta=args.beta),
                      augment=args.augment, gamma_schedule=args.gamma_schedule,
                      resolution=args.resolution, composition=args.composition,
                      point_phase=args.point_phase, joint_lr_scale=args.joint_lr_scale,
                      seed=args.seed, log_every=args.log_every,
                      checkpoint_every=args.checkpoint_every, checkpoint_dir=str(out / "checkpoints"))
    res = fit_dataset(sketches, cfg, log_path=out / "train_log.csv")
    save_model(out / "model.bin", res.decoder)
    save_latents(out / "latents.bin", res.latents.ids, res.latents.codes.data)
    _write_text(out / "dataset.json", manifest.to_json() + "\n")
    _manifest(out, args)
    print(f"trained {len(sketches)} sketches; final sampled CD {res.final_cd:.5f}")


def cmd_decode(args):
    from .codec import load_model
    from .model import decode_abstraction
    dec = load_model(args.model)
    v = _latent_by_id(args.latents, args.id)
    sk = decode_abstraction(dec, v, args.points, args.strokes)
    _svg_or_png(sk, args.out)


def cmd_complete(args):
    from .codec import load_model
    from .inversion import complete
    dec = load_model(args.model)
    v = _latent_by_id(args.latents, args.id)
    _svg_or_png(complete(dec, v, args.points, args.strokes), args.out)


def cmd_invert(args):
    from .codec import load_model, save_latents
    from .inversion import InvertConfig, ObservationMask, complete, invert
    from .render import render_svg
    dec = load_model(args.model)
    sk = _pick(_load_sketches(args.sketch, args.format, args.unit_square), args.index, args.id)
    mask = ObservationMask.parse(args.mask)
    cfg = InvertConfig(steps=args.steps, lr=args.lr, init_std=args.init_std, tolerance=args.tolerance)
    out = _outdir(args.out)
    J = args.points or sk.n_points
    K = args.strokes or sk.n_strokes
    seeds = [args.seed + i for i in range(args.seeds)]
    rows, codes = [], []
    for s in seeds:
        r = invert(dec, sk, mask, seed=s, cfg=cfg)
        codes.append(r.latent)
        rows.append([s, f"{r.masked_cd:.6f}", int(r.ok)])
        render_svg(complete(dec, r.latent, J, K), out / f"completion_seed{s}.svg")
    save_latents(out / "latents.bin", seeds, np.stack(codes))
    _write_csv(out / "inversion.csv", ["seed", "masked_cd", "ok"], rows)
    _manifest(out, args)
    if not all(r[2] for r in rows):
        raise CLIError(f"masked-region CD above tolerance {args.tolerance} for some seeds "
                       f"(see {out / 'inversion.csv'})")


def cmd_interpolate(args):
    from .codec import load_model
    from .inversion import latent_walk, walk_curve
    from .model import build_sample_grid, decode
    from .render import render_svg
    dec = load_model(args.model)
    v1, v2 = _latent_by_id(args.latents, args.from_id), _latent_by_id(args.latents, args.to_id)
    out = _outdir(args.out)
    grid = build_sample_grid(args.points, args.strokes)
    width = max(3, len(str(args.steps)))
    for i in range(args.steps + 1):
        sk = decode(dec, latent_walk(v1, v2, i / args.steps), grid)
        render_svg(sk, out / f"frame_{i:0{width}d}.svg")
    deltas, _, cds = walk_curve(dec, v1, v2, args.points, args.strokes, args.curve_step)
    _write_csv(out / "walk_cd.csv", ["delta_from", "delta_to", "chamfer"],
               [[f"{a:.4f}", f"{b:.4f}", f"{c:.6f}"] for a, b, c in zip(deltas, deltas[1:], cds)])
    _manifest(out, args)


def cmd_train_vae(args):
    from .codec import load_model
    from .formats import load_dataset
    from .generative import VAEConfig, save_encoder, train_vae
    dec = load_model(args.model)
    sketches, _ = load_dataset(args.data, args.format, unit_square=args.unit_square)
    if args.limit:
        sketches = sketches[:args.limit]
    cfg = VAEConfig(steps=args.steps, lr=args.lr, batch_size=args.batch_size, seed=args.seed)
    enc, hist = train_vae(dec, sketches, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_encoder(out, enc)
    _write_csv(out.with_suffix(".log.csv"), ["step", "loss", "loss_V", "loss_MSE", "kl"],
               [[h["step"], f"{h['loss']:.6g}", "" if h["loss_V"] != h["loss_V"] else f"{h['loss_V']:.6g}", f"{h['loss_MSE']:.6g}",
                 f"{h['kl']:.6g}"] for h in hist])
    _manifest(out.parent, args)


def cmd_generate(args):
    from .codec import load_model
    from .generative import load_encoder, sample_unconditional
    from .render import render_grid, render_svg
    dec, enc = load_model(args.model), load_encoder(args.vae)
    out = _outdir(args.out)
    sketches = [sample_unconditional(enc, dec, args.seed * 100003 + i, args.points, args.strokes)
                for i in range(args.count)]
    for i, sk in enumerate(sketches):
        render_svg(sk, out / f"sample_{i:03d}.svg")
    render_grid(sketches, out / "grid.svg")
    _manifest(out, args)


def cmd_vectorize(args):
    from .codec import load_model
    from .generative import load_encoder, load_raster, vectorize
    from .render import render_svg
    dec, enc = load_model(args.model), load_encoder(args.vae)
    if not Path(args.image).exists():
        raise FileNotFoundError(f"no such image: {args.image}")
    img = load_raster(args.image, enc.size)
    out = _outdir(args.out)
    variants = vectorize(enc, dec, img, args.variants, args.points, args.strokes, args.seed,
                         sigma_zero=args.deterministic)
    for i, sk in enumerate(variants):
        render_svg(sk, out / f"variant_{i:02d}.svg")
    _manifest(out, args)


def cmd_compress_report(args):
    from .codec import load_latents, load_model, plot_rd, rate_distortion_sweep, write_rd_csv
    from .formats import load_dataset
    sketches, _ = load_dataset(args.data, args.format, unit_square=args.unit_square)
    if args.limit:
        sketches = sketches[:args.limit]
    dims = [int(d) for d in args.dims.split(",") if d]
    mdir = Path(args.models)
    if not mdir.is_dir():
        raise FileNotFoundError(f"no such model directory: {mdir}")
    models = {}
    for D in dims:
        mp, lp = mdir / f"model_d{D}.bin", mdir / f"latents_d{D}.bin"
        if mp.exists() and lp.exists():
            ids, vals = load_latents(lp)
            models[D] = (load_model(mp), dict(zip(ids.tolist(), vals)))
    pts = rate_distortion_sweep(sketches, models, dims=dims,
                                rdp_eps=[float(e) for e in args.rdp.split(",")],
                                raster_sizes=[int(s) for s in args.raster_sizes.split(",")])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_rd_csv(args.out, pts)
    if args.plot:
        Path(args.plot).parent.mkdir(parents=True, exist_ok=True)
        plot_rd(args.plot, pts)
    _manifest(Path(args.out).parent, args)
    print("decoder weights are excluded from every per-sketch byte figure (shared, amortized)")


def cmd_render(args):
    sketches = _load_sketches(args.sketch, args.format, args.unit_square)
    if args.all:
        out = _outdir(args.out)
        ext = ".png" if args.png else ".svg"
        for i, sk in enumerate(sketches):
            _svg_or_png(sk, out / f"sketch_{sk.sketch_id if sk.sketch_id is not None else i}{ext}")
    else:
        _svg_or_png(_pick(sketches, args.index, args.id), args.out)


def cmd_info(args):
    import struct
    from .codec import LATENT_MAGIC, MODEL_MAGIC, VAE_MAGIC, decode_latents, decode_model
    from .generative import load_encoder
    p = Path(args.file)
    buf = p.read_bytes()
    magic = buf[:4]
    if magic == MODEL_MAGIC:
        dec = decode_model(buf)
        info = {"type": "model", "version": struct.unpack_from("<H", buf, 4)[0],
                "latent_dim": dec.latent_dim, "L": dec.L, "depth": dec.depth, "width": dec.width,
                "activation": dec.activation, "bytes": len(buf)}
    elif magic == LATENT_MAGIC:
        ids, vals = decode_latents(buf)
        info = {"type": "latents", "count": len(ids), "dim": vals.shape[1], "bytes": len(buf),
                "ids": ids[:10].tolist()}
    elif magic == VAE_MAGIC:
        enc = load_encoder(p)
        info = {"type": "vae-encoder", "latent_dim": enc.d, "hidden": enc.hidden, "raster": enc.size,
                "bytes": len(buf)}
    else:
        raise CLIError(f"{p}: unrecognized file (magic {magic!r})")
    print(json.dumps(info, sort_keys=True))


# parser ----------------------------------------------------------------------

def _add_data(p, required=True):
    from .formats import FORMATS
    p.add_argument("--data", required=required, help="dataset directory")
    p.add_argument("--format", default="quickdraw-ndjson", choices=FORMATS)
    p.add_argument("--unit-square", action="store_true", help="coordinates are already in [0,1]")
    p.add_argument("--limit", type=int, default=0, help="use only the first N sketches")


def _add_grid(p, points=100, strokes=None):
    p.add_argument("--points", type=int, default=points, help="timestamps J")
    p.add_argument("--strokes", type=int, default=strokes, required=strokes is None,
                   help="strokestamps K")


def build_parser() -> argparse.ArgumentParser:
    from .train import TrainConfig
    d = TrainConfig()
    ap = argparse.ArgumentParser(prog="sketchfield", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, func, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--seed", type=int, default=None if name in SEEDED else 0)
        p.set_defaults(func=func)
        return p

    p = command("train", cmd_train, help="fit decoder and latent table to a dataset")
    _add_data(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--latent-dim", type=int, default=d.latent_dim)
    p.add_argument("--frequencies", type=int, default=d.L, help="encoding frequencies L")
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--depth", type=int, default=d.depth)
    p.add_argument("--activation", default=d.activation, choices=["silu", "relu", "tanh"])
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--lr-decoder", type=float, default=d.lr_decoder)
    p.add_argument("--lr-latent", type=float, default=d.lr_latent)
    p.add_argument("--lambda-mse", type=float, default=d.weights.mse)
    p.add_argument("--gamma", type=float, default=d.weights.gamma)
    p.add_argument("--beta", type=float, default=d.weights.beta)
    p.add_argument("--augment", type=float, default=d.augment)
    p.add_argument("--gamma-schedule", action="store_true")
    p.add_argument("--resolution", type=int, default=d.resolution)
    p.add_argument("--composition", default=d.composition, choices=["max", "sum"])
    p.add_argument("--point-phase", type=float, default=d.point_phase)
    p.add_argument("--joint-lr-scale", type=float, default=d.joint_lr_scale)
    p.add_argument("--log-every", type=int, default=d.log_every)
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = command("invert", cmd_invert, help="fit latents to a (partial) sketch with the decoder frozen")
    p.add_argument("--model", required=True)
    p.add_argument("--sketch", required=True, help="sketch file or directory")
    p.add_argument("--format", default="quickdraw-ndjson")
    p.add_argument("--unit-square", action="store_true")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--id", type=int, default=None)
    p.add_argument("--mask", default="0:1", help="observed time intervals 'a:b[,c:d]' or strokes 's0,1'")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds (seed, seed+1, ...)")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--init-std", type=float, default=0.1, help="spread of the seeded starting code")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--points", type=int, default=0)
    p.add_argument("--strokes", type=int, default=0)
    p.add_argument("--out", required=True)

    for name, func, hlp in (("decode", cmd_decode, "decode one latent to SVG/PNG"),
                            ("complete", cmd_complete, "full-grid decode of an inverted latent")):
        p = command(name, func, help=hlp)
        p.add_argument("--model", required=True)
        p.add_argument("--latents", required=True)
        p.add_argument("--id", type=int, required=True)
        _add_grid(p)
        p.add_argument("--out", required=True)

    p = command("interpolate", cmd_interpolate, help="SVG frames along a latent walk")
    p.add_argument("--model", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--from", dest="from_id", type=int, required=True)
    p.add_argument("--to", dest="to_id", type=int, required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--curve-step", type=float, default=0.02)
    _add_grid(p, strokes=1)
    p.add_argument("--out", required=True)

    p = command("train-vae", cmd_train_vae, help="fit the raster encoder against a trained decoder")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", required=True, help="encoder file")

    p = command("generate", cmd_generate, help="unconditional samples")
    p.add_argument("--model", required=True)
    p.add_argument("--vae", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--points", type=int, default=None, help="J (default: drawn from [100, 300])")
    p.add_argument("--strokes", type=int, default=None, help="K (default: drawn from [10, 30])")
    p.add_argument("--out", required=True)

    p = command("vectorize", cmd_vectorize, help="vector variants of a raster image")
    p.add_argument("--model", required=True)
    p.add_argument("--vae", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--variants", type=int, default=4)
    p.add_argument("--deterministic", action="store_true", help="decode the posterior mean")
    _add_grid(p, strokes=1)
    p.add_argument("--out", required=True)

    p = command("compress-report", cmd_compress_report, help="rate-distortion sweep")
    _add_data(p)
    p.add_argument("--models", required=True, help="directory with model_dD.bin / latents_dD.bin")
    p.add_argument("--dims", default="8,16,32,64,128")
    p.add_argument("--rdp", default="0,0.005,0.01,0.02,0.05")
    p.add_argument("--raster-sizes", default="256,128,64,32,16")
    p.add_argument("--plot", default=None)
    p.add_argument("--out", required=True)

    p = command("render", cmd_render, help="render dataset sketches to SVG/PNG")
    p.add_argument("--sketch", required=True)
    p.add_argument("--format", default="quickdraw-ndjson")
    p.add_argument("--unit-square", action="store_true")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--id", type=int, default=None)
    p.add_argument("--all", action="store_true", help="render every sketch into --out (a directory)")
    p.add_argument("--png", action="store_true", help="with --all, write PNG instead of SVG")
    p.add_argument("--out", required=True)

    p = command("info", cmd_info, help="describe a model, latent or encoder file")
    p.add_argument("file")
    return ap


def _apply_config(parser, argv):
    """Parse ``argv`` with config-file values installed as subparser defaults."""
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in sub.choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    path = Path(known.config)
    if not path.exists():
        raise FileNotFoundError(f"no such config file: {path}")
    values = json.loads(path.read_text())
    if not isinstance(values, dict):
        raise CLIError(f"config file {path} must hold a JSON object")
    subparser = sub.choices[command]
    known_dests = {a.dest for a in subparser._actions}
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - known_dests)
    if unknown:
        raise CLIError(f"unknown config keys for {command}: {', '.join(unknown)}")
    subparser.set_defaults(**values)
    # required options satisfied by the file are no longer required on the command line
    for a in subparser._actions:
        if a.dest in values:
            a.required = False
    return parser.parse_args(argv)


@contextlib.contextmanager
def _thread_limit():
    n = os.environ.get("SKETCHFIELD_THREADS")
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=int(n)):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command in SEEDED:
            if args.seed is None:
                if os.environ.get("SKETCHFIELD_CI"):
                    raise CLIError(f"--seed is required for {args.command} when SKETCHFIELD_CI is set")
                args.seed = 0
        with _thread_limit():
            args.func(args)
        return 0
    except SystemExit:
        raise
    except KeyboardInterrupt:
        print("sketchfield: error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # one line, machine-parsable
        msg = " ".join(str(exc).split())
        print(f"sketchfield: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
