"""Flat SVG line charts written without external renderers.

Axis labels show only the data extremes, so each chart carries no number
that is not present in its companion CSV.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_chart(path, series, title: str, xlabel: str, ylabel: str, log_y: bool = False) -> None:
    """``series`` is a list of (label, xs, ys); nonpositive ys are skipped on log axes."""
    pts_all = []
    cleaned = []
    for label, xs, ys in series:
        pts = [(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(y) and (y > 0 or not log_y)]
        cleaned.append((label, pts))
        pts_all.extend(pts)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
    ]
    x0, y0, x1, y1 = MARGIN, HEIGHT - MARGIN, WIDTH - 20, 40
    lines.append(f'<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>')
    if pts_all:
        xmin = min(p[0] for p in pts_all)
        xmax = max(p[0] for p in pts_all)
        ymin = min(p[1] for p in pts_all)
        ymax = max(p[1] for p in pts_all)
        tr = (lambda v: math.log10(v)) if log_y else (lambda v: v)
        tymin, tymax = tr(ymin), tr(ymax)
        xs_span = (xmax - xmin) or 1.0
        ys_span = (tymax - tymin) or 1.0

        def px(x):
            return x0 + (x - xmin) / xs_span * (x1 - x0)

        def py(y):
            return y0 - (tr(y) - tymin) / ys_span * (y0 - y1)

        for i, (label, pts) in enumerate(cleaned):
            if not pts:
                continue
            color = COLORS[i % len(COLORS)]
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
            lines.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            lines.append(
                f'<text x="{x1 - 5}" y="{y1 + 16 * (i + 1)}" text-anchor="end" font-family="sans-serif" '
                f'font-size="12" fill="{color}">{escape(label)}</text>'
            )
        font = 'font-family="sans-serif" font-size="11"'
        lines += [
            f'<text x="{x0}" y="{y0 + 16}" text-anchor="middle" {font}>{_fmt(xmin)}</text>',
            f'<text x="{x1}" y="{y0 + 16}" text-anchor="middle" {font}>{_fmt(xmax)}</text>',
            f'<text x="{x0 - 4}" y="{y0}" text-anchor="end" {font}>{_fmt(ymin)}</text>',
            f'<text x="{x0 - 4}" y="{y1 + 4}" text-anchor="end" {font}>{_fmt(ymax)}</text>',
        ]
    scale = " (log scale)" if log_y else ""
    lines += [
        f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 20}" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(xlabel)}</text>',
        f'<text x="16" y="{(y0 + y1) / 2}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2})">{escape(ylabel + scale)}</text>',
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
