"""Minimal log-log SVG panels: axes, points and a fitted line per panel."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PANEL_W, PANEL_H = 260, 200
MARGIN = 36


def _fmt(v):
    return f"{v:.2f}"


def _panel(entry, ox, oy):
    pts = [(math.log(n), math.log(v)) for n, v in entry["points"] if v and v > 0]
    out = [f'<g transform="translate({ox},{oy})">',
           f'<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#ccc"/>']
    title = f'{entry["mode"]} {entry["metric"]} d={entry["d"]} slope={entry["slope"]:.3f}'
    out.append(f'<text x="6" y="14" font-size="10">{escape(title)}</text>')
    if len(pts) < 2:
        out.append("</g>")
        return out
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    w, h = PANEL_W - 2 * MARGIN, PANEL_H - 2 * MARGIN

    def sx(x):
        return MARGIN + (x - x0) / (x1 - x0) * w

    def sy(y):
        return PANEL_H - MARGIN - (y - y0) / (y1 - y0) * h

    out.append(f'<line x1="{MARGIN}" y1="{PANEL_H - MARGIN}" x2="{PANEL_W - MARGIN}" '
               f'y2="{PANEL_H - MARGIN}" stroke="black"/>')
    out.append(f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{PANEL_H - MARGIN}" '
               f'stroke="black"/>')
    out.append(f'<text x="{PANEL_W / 2}" y="{PANEL_H - 8}" font-size="9" '
               f'text-anchor="middle">log n</text>')
    for x, y in pts:
        out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="#1f77b4"/>')
    slope = entry["slope"]
    if slope == slope:  # not nan
        xm, ym = sum(xs) / len(xs), sum(ys) / len(ys)
        ya, yb = ym + slope * (x0 - xm), ym + slope * (x1 - xm)
        out.append(f'<line x1="{_fmt(sx(x0))}" y1="{_fmt(sy(ya))}" x2="{_fmt(sx(x1))}" '
                   f'y2="{_fmt(sy(yb))}" stroke="#d62728"/>')
    out.append("</g>")
    return out


def slopes_svg(slopes, columns=3):
    """One panel per slope entry (dicts with mode, metric, d, slope, points)."""
    rows = max(1, math.ceil(len(slopes) / columns))
    width, height = columns * PANEL_W, rows * PANEL_H
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">']
    for k, entry in enumerate(slopes):
        body.extend(_panel(entry, (k % columns) * PANEL_W, (k // columns) * PANEL_H))
    body.append("</svg>")
    return "\n".join(body) + "\n"
