"""Static SVG figures: cube maps, heatmaps and a log-log scatter."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .dyadic import CubeId

SIZE = 400
PAD = 40
PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1",
           "#ff9da7", "#9c755f", "#bab0ac")
KIND_COLOURS = {"md": "#e15759", "compressed": "#bab0ac", "good": "#59a14f"}


def _doc(body: list[str], title: str, width: int = SIZE + 2 * PAD, height: int = SIZE + 2 * PAD) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    label = f'<text x="{PAD}" y="{PAD - 12}" font-family="sans-serif" font-size="14">{escape(title)}</text>'
    return "\n".join([head, label, *body, "</svg>"]) + "\n"


def _rect(q: CubeId, fill: str, stroke: str = "#333") -> str:
    """Cube of the unit square; y grows upwards."""
    side = SIZE / (1 << q.level)
    x = PAD + q.index[0] * side
    y = PAD + SIZE - (q.index[1] + 1) * side
    return (f'<rect x="{x:.3f}" y="{y:.3f}" width="{side:.3f}" height="{side:.3f}" '
            f'fill="{fill}" stroke="{stroke}" stroke-width="0.5"/>')


def _frame() -> str:
    return f'<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#000"/>'


def cube_map(cubes: dict[CubeId, str], title: str) -> str:
    """Cubes of the unit square filled with the given colours; 2-D only."""
    body = [_rect(q, c) for q, c in sorted(cubes.items())]
    return _doc(body + [_frame()], title)


def class_map(classes: dict, level: int, title: str = "cube classes") -> str:
    cubes = {q: KIND_COLOURS[c.kind] for q, c in classes.items() if q.level == level and q.d == 2}
    return cube_map(cubes, f"{title} (level {level})")


def heat_colour(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    r = int(255 * t)
    b = int(255 * (1 - t))
    return f"#{r:02x}40{b:02x}"


def heatmap(values: dict[CubeId, float], title: str) -> str:
    top = max(values.values(), default=0.0)
    cubes = {q: heat_colour(v / top if top > 0 else 0.0) for q, v in values.items() if q.d == 2}
    return cube_map(cubes, f"{title} (max {top:.4g})")


def cell_map(grid, title: str) -> str:
    """Integer label grid (2-D cells, -1 for none) drawn with a cyclic palette."""
    n = len(grid)
    side = SIZE / n
    body = []
    for i in range(n):
        for j in range(n):
            lab = int(grid[i][j])
            if lab < 0:
                continue
            x = PAD + i * side
            y = PAD + SIZE - (j + 1) * side
            body.append(f'<rect x="{x:.3f}" y="{y:.3f}" width="{side:.3f}" height="{side:.3f}" '
                        f'fill="{PALETTE[lab % len(PALETTE)]}"/>')
    return _doc(body + [_frame()], title)


def loglog_scatter(points: list[tuple[float, float]], title: str, xlabel: str, ylabel: str) -> str:
    pts = [(x, y) for x, y in points if x > 0 and y > 0]
    body = [_frame()]
    if pts:
        lx = [math.log10(x) for x, _ in pts]
        ly = [math.log10(y) for _, y in pts]
        x0, x1 = min(lx), max(lx)
        y0, y1 = min(ly), max(ly)
        xs = (x1 - x0) or 1.0
        ys = (y1 - y0) or 1.0
        for a, b in zip(lx, ly):
            cx = PAD + 10 + (SIZE - 20) * (a - x0) / xs
            cy = PAD + SIZE - 10 - (SIZE - 20) * (b - y0) / ys
            body.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="4" fill="{PALETTE[0]}"/>')
        body.append(f'<text x="{PAD}" y="{PAD + SIZE + 28}" font-family="sans-serif" font-size="12">'
                    f'{escape(xlabel)}: 1e{x0:.2f} to 1e{x1:.2f}</text>')
        body.append(f'<text x="{PAD + SIZE / 2}" y="{PAD + SIZE + 28}" font-family="sans-serif" '
                    f'font-size="12">{escape(ylabel)}: 1e{y0:.2f} to 1e{y1:.2f}</text>')
    return _doc(body, title)
