"""Procedural stand-in corpora written in the real on-disk formats.

``digits`` imitates Vector-MNIST (1-2 smooth strokes per numeral) and
``doodles`` imitates Quick-Draw simplified drawings (several short strokes on
a 0-255 canvas, RDP-thinned).  Each sample applies a random affine warp and
per-control-point jitter to a hand-made template.

    python -m sketchfield.synth digits 100 --seed 0 --out data/vmnist
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .sketch import VectorSketch, normalize, rdp_simplify


def _arc(cx, cy, rx, ry, a0, a1, n=8):
    t = np.radians(np.linspace(a0, a1, n))
    return np.column_stack([cx + rx * np.cos(t), cy + ry * np.sin(t)])


def _cat(*parts):
    return np.concatenate([np.asarray(p, float) for p in parts])


# control polylines in a unit box, y pointing down
DIGITS = {
    "0": [_arc(0.5, 0.5, 0.3, 0.45, -90, 270, 12)],
    "1": [[(0.35, 0.2), (0.55, 0.05), (0.55, 0.5), (0.55, 0.95)]],
    "2": [_cat(_arc(0.5, 0.3, 0.3, 0.25, 200, 360 + 30, 7), [(0.45, 0.65), (0.2, 0.95), (0.5, 0.95), (0.85, 0.95)])],
    "3": [_cat(_arc(0.45, 0.27, 0.3, 0.22, 210, 450, 7), _arc(0.45, 0.72, 0.33, 0.23, 270, 510, 7))],
    "4": [[(0.6, 0.05), (0.35, 0.4), (0.15, 0.65), (0.5, 0.65), (0.85, 0.65)],
          [(0.65, 0.35), (0.65, 0.65), (0.65, 0.95)]],
    "5": [[(0.8, 0.05), (0.5, 0.05), (0.25, 0.05)],
          _cat([(0.25, 0.05), (0.23, 0.25), (0.22, 0.42)], _arc(0.48, 0.68, 0.32, 0.27, 235, 490, 8))],
    "6": [_cat([(0.7, 0.05), (0.5, 0.2), (0.3, 0.45)], _arc(0.5, 0.72, 0.27, 0.22, 180, 540, 10))],
    "7": [[(0.15, 0.07), (0.5, 0.05), (0.85, 0.05), (0.65, 0.4), (0.45, 0.7), (0.35, 0.95)]],
    "8": [_cat(_arc(0.5, 0.27, 0.25, 0.22, 90, 450, 10), _arc(0.5, 0.72, 0.3, 0.23, -90, 270, 10))],
    "9": [_cat(_arc(0.5, 0.3, 0.28, 0.24, 0, 360, 10), [(0.78, 0.3), (0.75, 0.6), (0.7, 0.95)])],
}

DOODLES = {
    "house": [[(0.1, 0.45), (0.1, 0.95), (0.9, 0.95), (0.9, 0.45), (0.1, 0.45)],
              [(0.05, 0.5), (0.5, 0.05), (0.95, 0.5)],
              [(0.4, 0.95), (0.4, 0.65), (0.6, 0.65), (0.6, 0.95)]],
    "sun": [_arc(0.5, 0.5, 0.22, 0.22, 0, 360, 12)]
           + [[(0.5 + 0.3 * np.cos(a), 0.5 + 0.3 * np.sin(a)), (0.5 + 0.45 * np.cos(a), 0.5 + 0.45 * np.sin(a))]
              for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)],
    "fish": [_cat(_arc(0.45, 0.5, 0.35, 0.22, 200, 520, 12)),
             [(0.78, 0.5), (0.95, 0.3), (0.95, 0.7), (0.78, 0.5)],
             _arc(0.25, 0.45, 0.03, 0.03, 0, 360, 5)],
    "tree": [[(0.45, 0.95), (0.45, 0.6), (0.55, 0.6), (0.55, 0.95)],
             _arc(0.5, 0.38, 0.3, 0.28, 120, 420, 12)],
    "star": [[(0.5, 0.05), (0.63, 0.38), (0.97, 0.4), (0.7, 0.6), (0.8, 0.95),
              (0.5, 0.75), (0.2, 0.95), (0.3, 0.6), (0.03, 0.4), (0.37, 0.38), (0.5, 0.05)]],
    "face": [_arc(0.5, 0.5, 0.42, 0.45, 0, 360, 14), _arc(0.35, 0.38, 0.04, 0.04, 0, 360, 5),
             _arc(0.65, 0.38, 0.04, 0.04, 0, 360, 5), _arc(0.5, 0.6, 0.2, 0.15, 20, 160, 7)],
    "cup": [[(0.2, 0.2), (0.25, 0.9), (0.7, 0.9), (0.75, 0.2)], _arc(0.475, 0.2, 0.275, 0.06, 0, 360, 10),
            _arc(0.78, 0.5, 0.12, 0.15, -80, 80, 6)],
    "flower": [[(0.5, 0.55), (0.52, 0.97)], _arc(0.5, 0.35, 0.08, 0.08, 0, 360, 8)]
              + [_arc(0.5 + 0.17 * np.cos(a), 0.35 + 0.17 * np.sin(a), 0.09, 0.09, 0, 360, 8)
                 for a in np.linspace(0, 2 * np.pi, 5, endpoint=False)],
    "cloud": [_cat(_arc(0.3, 0.55, 0.18, 0.16, 90, 270, 6), _arc(0.5, 0.4, 0.2, 0.2, 180, 360, 7),
                   _arc(0.72, 0.55, 0.18, 0.16, 270, 450, 6), [(0.3, 0.71)])],
    "car": [[(0.05, 0.7), (0.05, 0.5), (0.25, 0.5), (0.35, 0.3), (0.7, 0.3), (0.8, 0.5), (0.95, 0.5), (0.95, 0.7)],
            _arc(0.27, 0.72, 0.09, 0.09, 0, 360, 8), _arc(0.73, 0.72, 0.09, 0.09, 0, 360, 8),
            [(0.36, 0.72), (0.64, 0.72)]],
}


def _catmull_rom(ctrl: np.ndarray, per_seg: int) -> np.ndarray:
    if len(ctrl) < 3:
        t = np.linspace(0, 1, per_seg + 1)[:, None]
        return ctrl[0] + t * (ctrl[-1] - ctrl[0])
    p = np.vstack([2 * ctrl[0] - ctrl[1], ctrl, 2 * ctrl[-1] - ctrl[-2]])
    out = []
    t = np.linspace(0, 1, per_seg, endpoint=False)[:, None]
    for i in range(1, len(p) - 2):
        p0, p1, p2, p3 = p[i - 1], p[i], p[i + 1], p[i + 2]
        out.append(0.5 * (2 * p1 + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t ** 2
                          + (-p0 + 3 * p1 - 3 * p2 + p3) * t ** 3))
    out.append(ctrl[-1:])
    return np.concatenate(out)


def _warp(strokes, rng, jitter, rot_deg, shear):
    ang = np.radians(rng.uniform(-rot_deg, rot_deg))
    sx, sy = rng.uniform(0.8, 1.2, 2)
    sh = rng.uniform(-shear, shear)
    A = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]]) @ np.array([[sx, sh], [0, sy]])
    out = []
    for s in strokes:
        s = np.asarray(s, float)
        s = s + rng.normal(0, jitter, s.shape)
        out.append((s - 0.5) @ A.T + 0.5)
    return out


def make_digit(label: str, rng, sketch_id=None) -> VectorSketch:
    ctrl = _warp(DIGITS[label], rng, jitter=0.025, rot_deg=12, shear=0.25)
    strokes = [_catmull_rom(c, 3) for c in ctrl]
    sk = VectorSketch.from_strokes(strokes, sketch_id, label)
    sk, _ = normalize(sk)
    return rdp_simplify(sk, 0.004)


def make_doodle(label: str, rng, sketch_id=None) -> VectorSketch:
    ctrl = _warp(DOODLES[label], rng, jitter=0.02, rot_deg=10, shear=0.15)
    strokes = [_catmull_rom(c, 4) for c in ctrl]
    order = np.arange(len(strokes))
    if len(strokes) > 2 and rng.random() < 0.3:
        rng.shuffle(order[1:])
    strokes = [strokes[i] for i in order]
    sk, _ = normalize(VectorSketch.from_strokes(strokes, sketch_id, label))
    # Quick-Draw "simplified" drawings are RDP-thinned at 2 units on a 255 canvas
    return rdp_simplify(sk, 2.0 / 255)


def digits(count: int, seed: int = 0, first_id: int = 0) -> list[VectorSketch]:
    rng = np.random.default_rng(seed)
    labels = sorted(DIGITS)
    return [make_digit(labels[i % 10], rng, first_id + i) for i in range(count)]


def doodles(count: int, seed: int = 0, first_id: int = 0, max_points: int = 150) -> list[VectorSketch]:
    rng = np.random.default_rng(seed)
    labels = sorted(DOODLES)
    out = []
    i = 0
    while len(out) < count:
        sk = make_doodle(labels[i % len(labels)], rng, first_id + len(out))
        i += 1
        if sk.n_points <= max_points:
            out.append(sk)
    return out


def main(argv=None):
    from .formats import write_quickdraw, write_vector_mnist
    ap = argparse.ArgumentParser(prog="python -m sketchfield.synth")
    ap.add_argument("kind", choices=["digits", "doodles"])
    ap.add_argument("count", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--first-id", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "digits":
        write_vector_mnist(out / "digits.ndjson", digits(args.count, args.seed, args.first_id))
    else:
        write_quickdraw(out / "doodles.ndjson", doodles(args.count, args.seed, args.first_id))


if __name__ == "__main__":
    main()
