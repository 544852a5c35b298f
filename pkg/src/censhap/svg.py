"""Dependency-free SVG output: bar charts, waterfalls, curves, scatters.

Fixed 800x600 viewbox, numeric labels at 4 significant digits, and no
run-dependent content, so rerunning a command reproduces the bytes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

WIDTH, HEIGHT = 800, 600
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def fmt(v: float) -> str:
    if v != v:  # NaN
        return "n/a"
    return f"{v:.4g}"


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'width="{WIDTH}" height="{HEIGHT}" font-family="Helvetica, Arial, sans-serif">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="28" font-size="18" text-anchor="middle">{_esc(title)}</text>',
    ]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return raw


class _Scale:
    def __init__(self, lo: float, hi: float, out_lo: float, out_hi: float):
        if hi == lo:
            hi = lo + 1.0
        self.lo, self.hi, self.out_lo, self.out_hi = lo, hi, out_lo, out_hi

    def __call__(self, v: float) -> float:
        t = (v - self.lo) / (self.hi - self.lo)
        return self.out_lo + t * (self.out_hi - self.out_lo)


def bar_chart(items: Sequence[tuple[str, float]], title: str, x_label: str = "") -> str:
    """Horizontal bars; negative values extend left of the zero line."""
    left, right, top, bottom = 170, 40, 60, 60
    values = [v for _, v in items]
    lo = min(0.0, min(values))
    hi = max(0.0, max(values))
    pad = 0.05 * (hi - lo or 1.0)
    sx = _Scale(lo - pad, hi + pad, left, WIDTH - right)
    rows = len(items)
    slot = (HEIGHT - top - bottom) / max(rows, 1)
    bar_h = min(0.6 * slot, 40.0)

    out = _header(title)
    for t in _ticks(lo, hi):
        x = sx(t)
        out.append(f'<line x1="{x:.1f}" y1="{top}" x2="{x:.1f}" y2="{HEIGHT - bottom}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{x:.1f}" y="{HEIGHT - bottom + 18}" font-size="11" '
                   f'text-anchor="middle">{fmt(t)}</text>')
    zero = sx(0.0)
    out.append(f'<line x1="{zero:.1f}" y1="{top}" x2="{zero:.1f}" y2="{HEIGHT - bottom}" '
               f'stroke="#555555"/>')
    for i, (label, v) in enumerate(items):
        yc = top + (i + 0.5) * slot
        x0, x1 = sorted((zero, sx(v)))
        color = PALETTE[0] if v >= 0 else PALETTE[1]
        out.append(f'<rect x="{x0:.1f}" y="{yc - bar_h / 2:.1f}" width="{x1 - x0:.1f}" '
                   f'height="{bar_h:.1f}" fill="{color}"/>')
        out.append(f'<text x="{left - 8}" y="{yc + 4:.1f}" font-size="12" '
                   f'text-anchor="end">{_esc(label)}</text>')
        tx = x1 + 4 if v >= 0 else x0 - 4
        anchor = "start" if v >= 0 else "end"
        out.append(f'<text x="{tx:.1f}" y="{yc + 4:.1f}" font-size="11" '
                   f'text-anchor="{anchor}">{fmt(v)}</text>')
    if x_label:
        out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 14}" font-size="13" '
                   f'text-anchor="middle">{_esc(x_label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def waterfall(labels: Sequence[str], deltas: Sequence[float], start: float,
              title: str, total_label: str = "total") -> str:
    """Floating bars accumulating the deltas from the start value."""
    left, right, top, bottom = 70, 40, 60, 110
    cums = [start]
    for d in deltas:
        cums.append(cums[-1] + d)
    lo, hi = min(cums), max(cums)
    pad = 0.08 * (hi - lo or 1.0)
    sy = _Scale(lo - pad, hi + pad, HEIGHT - bottom, top)
    cols = len(deltas) + 1
    slot = (WIDTH - left - right) / cols
    bar_w = min(0.6 * slot, 70.0)

    out = _header(title)
    for t in _ticks(lo, hi):
        y = sy(t)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{WIDTH - right}" y2="{y:.1f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{fmt(t)}</text>')
    base_y = sy(start)
    out.append(f'<line x1="{left}" y1="{base_y:.1f}" x2="{WIDTH - right}" y2="{base_y:.1f}" '
               f'stroke="#555555" stroke-dasharray="4 3"/>')
    out.append(f'<text x="{left + 2}" y="{base_y - 6:.1f}" font-size="11">start {fmt(start)}</text>')
    for i, (label, d) in enumerate(zip(labels, deltas)):
        xc = left + (i + 0.5) * slot
        y0, y1 = sorted((sy(cums[i]), sy(cums[i + 1])))
        color = PALETTE[2] if d >= 0 else PALETTE[1]
        out.append(f'<rect x="{xc - bar_w / 2:.1f}" y="{y0:.1f}" width="{bar_w:.1f}" '
                   f'height="{max(y1 - y0, 0.5):.1f}" fill="{color}"/>')
        out.append(f'<text x="{xc:.1f}" y="{y0 - 5:.1f}" font-size="11" '
                   f'text-anchor="middle">{fmt(d)}</text>')
        out.append(f'<g transform="translate({xc:.1f},{HEIGHT - bottom + 14}) rotate(45)">'
                   f'<text font-size="11">{_esc(label)}</text></g>')
    xc = left + (cols - 0.5) * slot
    y0, y1 = sorted((sy(start), sy(cums[-1])))
    out.append(f'<rect x="{xc - bar_w / 2:.1f}" y="{y0:.1f}" width="{bar_w:.1f}" '
               f'height="{max(y1 - y0, 0.5):.1f}" fill="{PALETTE[0]}"/>')
    out.append(f'<text x="{xc:.1f}" y="{y0 - 5:.1f}" font-size="11" '
               f'text-anchor="middle">{fmt(cums[-1])}</text>')
    out.append(f'<g transform="translate({xc:.1f},{HEIGHT - bottom + 14}) rotate(45)">'
               f'<text font-size="11">{_esc(total_label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_chart(
    series: Sequence[tuple[str, np.ndarray, np.ndarray]],
    points: Sequence[tuple[str, np.ndarray, np.ndarray]] = (),
    title: str = "",
    x_label: str = "",
    y_label: str = "",
) -> str:
    """Polylines plus optional point overlays, with a small legend."""
    left, right, top, bottom = 80, 40, 60, 70
    xs = np.concatenate([np.asarray(x, dtype=float) for _, x, _ in [*series, *points]])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, _, y in [*series, *points]])
    ys = ys[np.isfinite(ys)]
    xs = xs[np.isfinite(xs)]
    sx = _Scale(float(xs.min()), float(xs.max()), left, WIDTH - right)
    pad = 0.05 * (float(ys.max()) - float(ys.min()) or 1.0)
    sy = _Scale(float(ys.min()) - pad, float(ys.max()) + pad, HEIGHT - bottom, top)

    out = _header(title)
    for t in _ticks(float(xs.min()), float(xs.max())):
        x = sx(t)
        out.append(f'<line x1="{x:.1f}" y1="{top}" x2="{x:.1f}" y2="{HEIGHT - bottom}" '
                   f'stroke="#eeeeee"/>')
        out.append(f'<text x="{x:.1f}" y="{HEIGHT - bottom + 18}" font-size="11" '
                   f'text-anchor="middle">{fmt(t)}</text>')
    for t in _ticks(float(ys.min()), float(ys.max())):
        y = sy(t)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{WIDTH - right}" y2="{y:.1f}" '
                   f'stroke="#eeeeee"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{fmt(t)}</text>')
    color_idx = 0
    legend = []
    for name, x, y in series:
        color = PALETTE[color_idx % len(PALETTE)]
        color_idx += 1
        pts = " ".join(
            f"{sx(float(a)):.1f},{sy(float(b)):.1f}"
            for a, b in zip(x, y) if np.isfinite(b)
        )
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        legend.append((name, color, "line"))
    for name, x, y in points:
        color = PALETTE[color_idx % len(PALETTE)]
        color_idx += 1
        for a, b in zip(x, y):
            if np.isfinite(b):
                out.append(f'<circle cx="{sx(float(a)):.1f}" cy="{sy(float(b)):.1f}" '
                           f'r="3" fill="{color}"/>')
        legend.append((name, color, "dot"))
    for i, (name, color, kind) in enumerate(legend):
        lx, ly = WIDTH - right - 170, top + 8 + 18 * i
        if kind == "line":
            out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" '
                       f'stroke="{color}" stroke-width="2"/>')
        else:
            out.append(f'<circle cx="{lx + 11}" cy="{ly}" r="3" fill="{color}"/>')
        out.append(f'<text x="{lx + 28}" y="{ly + 4}" font-size="12">{_esc(name)}</text>')
    if x_label:
        out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 14}" font-size="13" '
                   f'text-anchor="middle">{_esc(x_label)}</text>')
    if y_label:
        out.append(f'<g transform="translate(20,{HEIGHT / 2}) rotate(-90)">'
                   f'<text font-size="13" text-anchor="middle">{_esc(y_label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter(
    groups: Sequence[tuple[str, np.ndarray, np.ndarray]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    diagonal: bool = True,
) -> str:
    """Point clouds per tagged group, optionally with the y = x reference."""
    left, right, top, bottom = 80, 40, 60, 70
    xs = np.concatenate([np.asarray(x, dtype=float) for _, x, _ in groups])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, _, y in groups])
    lo = float(min(xs.min(), ys.min()))
    hi = float(max(xs.max(), ys.max()))
    pad = 0.05 * (hi - lo or 1.0)
    sx = _Scale(lo - pad, hi + pad, left, WIDTH - right)
    sy = _Scale(lo - pad, hi + pad, HEIGHT - bottom, top)

    out = _header(title)
    for t in _ticks(lo, hi):
        out.append(f'<text x="{sx(t):.1f}" y="{HEIGHT - bottom + 18}" font-size="11" '
                   f'text-anchor="middle">{fmt(t)}</text>')
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{fmt(t)}</text>')
    if diagonal:
        out.append(f'<line x1="{sx(lo):.1f}" y1="{sy(lo):.1f}" x2="{sx(hi):.1f}" '
                   f'y2="{sy(hi):.1f}" stroke="#ff7f0e" stroke-width="1.5"/>')
    for i, (name, x, y) in enumerate(groups):
        color = PALETTE[i % len(PALETTE)]
        for a, b in zip(x, y):
            out.append(f'<circle cx="{sx(float(a)):.1f}" cy="{sy(float(b)):.1f}" '
                       f'r="2" fill="{color}" fill-opacity="0.55"/>')
        lx, ly = left + 12, top + 8 + 18 * i
        out.append(f'<circle cx="{lx}" cy="{ly}" r="3" fill="{color}"/>')
        out.append(f'<text x="{lx + 10}" y="{ly + 4}" font-size="12">{_esc(name)}</text>')
    if x_label:
        out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 14}" font-size="13" '
                   f'text-anchor="middle">{_esc(x_label)}</text>')
    if y_label:
        out.append(f'<g transform="translate(20,{HEIGHT / 2}) rotate(-90)">'
                   f'<text font-size="13" text-anchor="middle">{_esc(y_label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
