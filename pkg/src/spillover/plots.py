"""Static SVG charts: effect curves with interval bands and distance-by-period heatmaps.

Output is plain text built from fixed-precision numbers, so identical inputs
give identical files.
"""
from __future__ import annotations

from html import escape

import numpy as np

__all__ = ["line_chart_svg", "heatmap_svg"]

_W, _H = 640, 400
_M = {"left": 70, "right": 150, "top": 40, "bottom": 55}
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(v) -> str:
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return []
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def _range(values):
    v = np.concatenate([np.ravel(np.asarray(a, dtype=float)) for a in values])
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _frame(title, xlabel, ylabel):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{(_M["left"] + _W - _M["right"]) / 2:.1f}" y="{_H - 12}" '
        f'text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{_H / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_H / 2:.1f})">{escape(ylabel)}</text>',
    ]
    return out


def line_chart_svg(x, series, *, title="", xlabel="distance", ylabel="effect",
                   zero_line=True) -> str:
    """Line chart of one or more curves over a shared x grid.

    Parameters
    ----------
    x : array_like
    series : list of dict
        Each with ``label`` and ``y``; optional ``lo``/``hi`` draw a shaded
        band and ``dashed`` a dashed line.
    """
    x = np.asarray(x, dtype=float)
    x0, x1 = float(x.min()), float(x.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    ys = [s["y"] for s in series] + [s[k] for s in series for k in ("lo", "hi") if k in s]
    y0, y1 = _range(ys)
    pw = _W - _M["left"] - _M["right"]
    ph = _H - _M["top"] - _M["bottom"]

    def px(v):
        return _M["left"] + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _M["top"] + (y1 - v) / (y1 - y0) * ph

    out = _frame(title, xlabel, ylabel)
    base = _M["top"] + ph
    out.append(f'<line x1="{_M["left"]}" y1="{base}" x2="{_M["left"] + pw}" y2="{base}" stroke="black"/>')
    out.append(f'<line x1="{_M["left"]}" y1="{_M["top"]}" x2="{_M["left"]}" y2="{base}" stroke="black"/>')
    for v in _ticks(x0, x1, min(len(x), 9)):
        out.append(f'<text x="{_f(px(v))}" y="{base + 16}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<text x="{_M["left"] - 6}" y="{_f(py(v) + 4)}" text-anchor="end">{v:.3g}</text>')
    if zero_line and y0 < 0 < y1:
        out.append(f'<line x1="{_M["left"]}" y1="{_f(py(0))}" x2="{_M["left"] + pw}" '
                   f'y2="{_f(py(0))}" stroke="#999" stroke-dasharray="3,3"/>')
    for k, s in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        y = np.asarray(s["y"], dtype=float)
        if "lo" in s and "hi" in s:
            lo = np.asarray(s["lo"], dtype=float)
            hi = np.asarray(s["hi"], dtype=float)
            ok = np.isfinite(lo) & np.isfinite(hi)
            if ok.any():
                upper = [f"{_f(px(a))},{_f(py(b))}" for a, b in zip(x[ok], hi[ok])]
                lower = [f"{_f(px(a))},{_f(py(b))}" for a, b in zip(x[ok][::-1], lo[ok][::-1])]
                out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                           f'fill-opacity="0.2" stroke="none"/>')
        ok = np.isfinite(y)
        pts = " ".join(f"{_f(px(a))},{_f(py(b))}" for a, b in zip(x[ok], y[ok]))
        dash = ' stroke-dasharray="6,4"' if s.get("dashed") else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        for a, b in zip(x[ok], y[ok]):
            out.append(f'<circle cx="{_f(px(a))}" cy="{_f(py(b))}" r="3" fill="{color}"/>')
        ly = _M["top"] + 14 + 18 * k
        lx = _W - _M["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(str(s["label"]))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _diverging(v, vmax):
    if not np.isfinite(v):
        return "#dddddd"
    r = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    if r >= 0:
        c = (255, int(255 * (1 - r)), int(255 * (1 - r)))
    else:
        c = (int(255 * (1 + r)), int(255 * (1 + r)), 255)
    return "#%02x%02x%02x" % c


def heatmap_svg(xs, ys, values, *, title="", xlabel="distance", ylabel="period") -> str:
    """Heatmap with ``values[i, j]`` at row ``ys[i]`` and column ``xs[j]``.

    Colours diverge from white at zero (red positive, blue negative).
    """
    values = np.asarray(values, dtype=float)
    nx, ny = len(xs), len(ys)
    pw = _W - _M["left"] - _M["right"]
    ph = _H - _M["top"] - _M["bottom"]
    cw, ch = pw / nx, ph / ny
    fin = values[np.isfinite(values)]
    vmax = float(np.abs(fin).max()) if fin.size else 0.0
    out = _frame(title, xlabel, ylabel)
    for i, yv in enumerate(ys):
        top = _M["top"] + i * ch
        out.append(f'<text x="{_M["left"] - 6}" y="{_f(top + ch / 2 + 4)}" text-anchor="end">{yv}</text>')
        for j in range(nx):
            left = _M["left"] + j * cw
            out.append(f'<rect x="{_f(left)}" y="{_f(top)}" width="{_f(cw)}" height="{_f(ch)}" '
                       f'fill="{_diverging(values[i, j], vmax)}" stroke="white"/>')
    for j, xv in enumerate(xs):
        out.append(f'<text x="{_f(_M["left"] + (j + 0.5) * cw)}" y="{_M["top"] + ph + 16}" '
                   f'text-anchor="middle">{float(xv):.3g}</text>')
    lx = _W - _M["right"] + 16
    for k, v in enumerate((vmax, 0.0, -vmax)):
        y = _M["top"] + 10 + 24 * k
        out.append(f'<rect x="{lx}" y="{y}" width="16" height="16" fill="{_diverging(v, vmax)}" '
                   f'stroke="#999"/>')
        out.append(f'<text x="{lx + 22}" y="{y + 12}">{v:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
