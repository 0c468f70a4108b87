"""Minimal deterministic SVG line and bar charts.

Output depends only on the inputs: fixed viewport, fixed palette, fixed
number formatting, no timestamps or random ids.
"""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 150, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _num(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _label(v: float) -> str:
    return f"{v:.4g}"


def _finite(vals) -> list[float]:
    return [float(v) for v in vals if v is not None and math.isfinite(float(v))]


def _range(vals: list[float]) -> tuple[float, float]:
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if lo == hi:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    return lo, hi


def _frame(title: str, xlabel: str, ylabel: str, x_lo: float, x_hi: float,
           y_lo: float, y_hi: float, x_ticks: Sequence[float] | None = None) -> list[str]:
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{MARGIN_L + pw / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{MARGIN_T + ph / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {MARGIN_T + ph / 2:.0f})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        yv = y_lo + (y_hi - y_lo) * i / 4
        y = MARGIN_T + ph - ph * i / 4
        out.append(f'<line x1="{MARGIN_L - 4}" y1="{_num(y)}" x2="{MARGIN_L}" y2="{_num(y)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{_num(y + 4)}" text-anchor="end">{_label(yv)}</text>')
    ticks = x_ticks if x_ticks is not None else [x_lo + (x_hi - x_lo) * i / 4 for i in range(5)]
    for xv in ticks:
        x = MARGIN_L + pw * (xv - x_lo) / (x_hi - x_lo)
        out.append(f'<line x1="{_num(x)}" y1="{MARGIN_T + ph}" x2="{_num(x)}" y2="{MARGIN_T + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_num(x)}" y="{MARGIN_T + ph + 18}" text-anchor="middle">{_label(xv)}</text>')
    return out


def _legend(names: Sequence[str]) -> list[str]:
    x = WIDTH - MARGIN_R + 12
    out = []
    for i, name in enumerate(names):
        y = MARGIN_T + 10 + 18 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{x}" y="{y - 8}" width="12" height="8" fill="{color}"/>')
        out.append(f'<text x="{x + 18}" y="{y}">{escape(name)}</text>')
    return out


def line_chart(series: Sequence[tuple[str, Sequence[float], Sequence[float | None]]],
               title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """One polyline per ``(name, xs, ys)``; ``None``/NaN points break the line."""
    if not series:
        raise ValueError("line_chart needs at least one series")
    xs_all = _finite(x for _, xs, _ in series for x in xs)
    ys_all = _finite(y for _, _, ys in series for y in ys)
    x_lo, x_hi = _range(xs_all)
    y_lo, y_hi = _range(ys_all)
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B
    out = _frame(title, xlabel, ylabel, x_lo, x_hi, y_lo, y_hi)
    for i, (_, xs, ys) in enumerate(series):
        if len(xs) != len(ys):
            raise ValueError("series x and y lengths differ")
        color = PALETTE[i % len(PALETTE)]
        runs, cur = [], []
        for x, y in zip(xs, ys):
            if y is None or not math.isfinite(float(y)):
                if cur:
                    runs.append(cur)
                cur = []
                continue
            px = MARGIN_L + pw * (float(x) - x_lo) / (x_hi - x_lo)
            py = MARGIN_T + ph - ph * (float(y) - y_lo) / (y_hi - y_lo)
            cur.append(f"{_num(px)},{_num(py)}")
        if cur:
            runs.append(cur)
        for pts in runs:
            if len(pts) == 1:
                cx, cy = pts[0].split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
            else:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
    out.extend(_legend([name for name, _, _ in series]))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(groups: Sequence[str], series: Sequence[tuple[str, Sequence[float | None]]],
              title: str = "", ylabel: str = "") -> str:
    """Grouped bars: one group per label in ``groups``, one bar per series."""
    if not groups or not series:
        raise ValueError("bar_chart needs groups and series")
    vals = _finite(v for _, vs in series for v in vs)
    y_hi = max(vals + [0.0]) or 1.0
    y_lo = min(vals + [0.0])
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B
    out = _frame(title, "", ylabel, 0.0, float(len(groups)), y_lo, y_hi, x_ticks=[])
    slot = pw / len(groups)
    bar = slot * 0.8 / len(series)
    zero = MARGIN_T + ph - ph * (0.0 - y_lo) / (y_hi - y_lo)
    for gi, name in enumerate(groups):
        x0 = MARGIN_L + slot * gi + slot * 0.1
        out.append(f'<text x="{_num(MARGIN_L + slot * (gi + 0.5))}" y="{MARGIN_T + ph + 18}" '
                   f'text-anchor="middle">{escape(name)}</text>')
        for si, (_, vs) in enumerate(series):
            if len(vs) != len(groups):
                raise ValueError("each bar series needs one value per group")
            v = vs[gi]
            if v is None or not math.isfinite(float(v)):
                continue
            y = MARGIN_T + ph - ph * (float(v) - y_lo) / (y_hi - y_lo)
            top, h = min(y, zero), abs(zero - y)
            out.append(f'<rect x="{_num(x0 + bar * si)}" y="{_num(top)}" width="{_num(bar)}" '
                       f'height="{_num(h)}" fill="{PALETTE[si % len(PALETTE)]}"/>')
    out.extend(_legend([name for name, _ in series]))
    out.append("</svg>")
    return "\n".join(out) + "\n"
