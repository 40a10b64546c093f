"""Minimal self-contained SVG line charts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    dashed: bool = False
    color: Optional[str] = None


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def line_chart(
    series: Sequence[Series],
    title: str = "",
    xlabel: str = "t",
    ylabel: str = "",
    log_y: bool = False,
    width: int = 640,
    height: int = 420,
) -> str:
    """Render ``series`` as an SVG document string.

    With ``log_y`` non-positive values are dropped from the plot.
    """
    left, right, top, bottom = 70, 160, 35, 50
    pw, ph = width - left - right, height - top - bottom

    def ty(v):
        return np.log10(v) if log_y else v

    pts = []
    for s in series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if log_y:
            ok &= y > 0
        pts.append((x[ok], ty(y[ok])))
    xs = np.concatenate([p[0] for p in pts]) if pts else np.array([])
    ys = np.concatenate([p[1] for p in pts]) if pts else np.array([])
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{px(v):.2f}" y1="{top + ph}" x2="{px(v):.2f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(v):.2f}" y="{top + ph + 16}" text-anchor="middle">{_fmt(v)}</text>')
    if log_y:
        yt = [float(k) for k in range(math.ceil(y0), math.floor(y1) + 1)] or [y0, y1]
        ylab = [f"1e{int(k)}" if float(k).is_integer() else _fmt(10**k) for k in yt]
    else:
        yt = _ticks(y0, y1)
        ylab = [_fmt(v) for v in yt]
    for v, lab in zip(yt, ylab):
        out.append(f'<line x1="{left - 4}" y1="{py(v):.2f}" x2="{left}" y2="{py(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{py(v) + 4:.2f}" text-anchor="end">{lab}</text>')
    for k, (s, (x, y)) in enumerate(zip(series, pts)):
        color = s.color or PALETTE[k % len(PALETTE)]
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        if x.size:
            path = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        ly = top + 12 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}"{dash}/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(s.label)}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    ytxt = escape(ylabel + (" (log scale)" if log_y and ylabel else ""))
    out.append(
        f'<text x="15" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2})">{ytxt}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
