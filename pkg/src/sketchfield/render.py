"""SVG export (one path per stroke) and PNG export via the rasterizer."""
from __future__ import annotations

from .codec import atomic_write
from .raster import rasterize
from .sketch import VectorSketch

VIEW = 512


def _path_d(stroke, scale: float, dx: float = 0.0, dy: float = 0.0) -> str:
    pts = [f"{x * scale + dx:.2f} {y * scale + dy:.2f}" for x, y in stroke]
    if len(pts) == 1:  # a dot: zero-length segment drawn with round caps
        return f"M {pts[0]} L {pts[0]}"
    return "M " + pts[0] + "".join(" L " + p for p in pts[1:])


def _paths(sk: VectorSketch, scale, dx=0.0, dy=0.0, indent="  "):
    return [f'{indent}<path d="{_path_d(s, scale, dx, dy)}"/>' for s in sk.strokes]


def svg_string(sk: VectorSketch, size: int = VIEW, stroke_width: float = 3.0) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {VIEW} {VIEW}">')
    group = (f'<g fill="none" stroke="black" stroke-width="{stroke_width:g}" '
             f'stroke-linecap="round" stroke-linejoin="round">')
    body = [head, f'<rect width="{VIEW}" height="{VIEW}" fill="white"/>', group]
    body += _paths(sk, VIEW)
    body += ["</g>", "</svg>", ""]
    return "\n".join(body)


def render_svg(sk: VectorSketch, path=None, stroke_width: float = 3.0) -> str:
    """Return the SVG text; also write it atomically when ``path`` is given."""
    text = svg_string(sk, stroke_width=stroke_width)
    if path is not None:
        atomic_write(path, text.encode())
    return text


def render_grid(sketches: list[VectorSketch], path=None, cols: int = 4, cell: int = 128,
                stroke_width: float = 1.5) -> str:
    """Several sketches tiled in one SVG, row-major."""
    rows = max(1, -(-len(sketches) // cols))
    w, h = cols * cell, rows * cell
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
            f'<rect width="{w}" height="{h}" fill="white"/>',
            f'<g fill="none" stroke="black" stroke-width="{stroke_width:g}" '
            f'stroke-linecap="round" stroke-linejoin="round">']
    pad = cell * 0.05
    for i, sk in enumerate(sketches):
        r, c = divmod(i, cols)
        body.append(f'  <g id="sketch{i}">')
        body += _paths(sk, cell - 2 * pad, c * cell + pad, r * cell + pad, indent="    ")
        body.append("  </g>")
    body += ["</g>", "</svg>", ""]
    text = "\n".join(body)
    if path is not None:
        atomic_write(path, text.encode())
    return text


def render_png(sk: VectorSketch, path, size: int = 256, stroke_width: int = 2):
    from .generative import save_png
    save_png(path, rasterize(sk, size, size, stroke_width))
