"""Minimal dependency-free SVG emitters for log-log lines and rasters."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["line_plot_svg", "raster_svg"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2"]


def _ticks(lo, hi):
    """Decade tick positions covering [lo, hi] (both positive)."""
    k0 = math.floor(math.log10(lo))
    k1 = math.ceil(math.log10(hi))
    return [10.0 ** k for k in range(k0, k1 + 1)]


def line_plot_svg(series: dict, xlabel: str = "h", ylabel: str = "error",
                  title: str = "", width: int = 640, height: int = 480,
                  logx: bool = True, logy: bool = True) -> str:
    """series: {label: (xs, ys)}; non-positive points are dropped on log axes."""
    pad_l, pad_r, pad_t, pad_b = 70, 20, 30, 50
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    pts = {}
    all_x, all_y = [], []
    for label, (xs, ys) in series.items():
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        keep = np.isfinite(xs) & np.isfinite(ys)
        if logx:
            keep &= xs > 0
        if logy:
            keep &= ys > 0
        pts[label] = (xs[keep], ys[keep])
        all_x.extend(xs[keep])
        all_y.extend(ys[keep])
    if not all_x:
        all_x, all_y = [1.0], [1.0]

    def span(vals, log):
        lo, hi = min(vals), max(vals)
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        m = 0.05 * (hi - lo)
        return lo - m, hi + m

    x0, x1 = span(all_x, logx)
    y0, y1 = span(all_y, logy)

    def sx(v):
        u = math.log10(v) if logx else v
        return pad_l + pw * (u - x0) / (x1 - x0)

    def sy(v):
        u = math.log10(v) if logy else v
        return pad_t + ph * (1 - (u - y0) / (y1 - y0))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" '
           'fill="none" stroke="#333"/>']
    if title:
        out.append(f'<text x="{width/2:.1f}" y="18" text-anchor="middle" '
                   f'font-size="14">{title}</text>')

    for axis, log, lo, hi in (("x", logx, x0, x1), ("y", logy, y0, y1)):
        if not log:
            continue
        for t in _ticks(10 ** lo, 10 ** hi):
            u = math.log10(t)
            if not lo <= u <= hi:
                continue
            if axis == "x":
                px = pad_l + pw * (u - lo) / (hi - lo)
                out.append(f'<line x1="{px:.1f}" y1="{pad_t}" x2="{px:.1f}" '
                           f'y2="{pad_t+ph}" stroke="#ddd"/>')
                out.append(f'<text x="{px:.1f}" y="{pad_t+ph+16}" '
                           f'text-anchor="middle" font-size="11">1e{int(u)}</text>')
            else:
                py = pad_t + ph * (1 - (u - lo) / (hi - lo))
                out.append(f'<line x1="{pad_l}" y1="{py:.1f}" x2="{pad_l+pw}" '
                           f'y2="{py:.1f}" stroke="#ddd"/>')
                out.append(f'<text x="{pad_l-6}" y="{py+4:.1f}" '
                           f'text-anchor="end" font-size="11">1e{int(u)}</text>')

    for k, (label, (xs, ys)) in enumerate(sorted(pts.items())):
        color = _PALETTE[k % len(_PALETTE)]
        if len(xs):
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
            out.append(f'<polyline points="{path}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
            for x, y in zip(xs, ys):
                out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" '
                           f'fill="{color}"/>')
        ly = pad_t + 16 + 16 * k
        out.append(f'<line x1="{pad_l+pw-120}" y1="{ly-4}" x2="{pad_l+pw-100}" '
                   f'y2="{ly-4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{pad_l+pw-95}" y="{ly}" font-size="11">{label}</text>')

    out.append(f'<text x="{pad_l+pw/2:.1f}" y="{height-10}" text-anchor="middle" '
               f'font-size="12">{xlabel}</text>')
    out.append(f'<text x="16" y="{pad_t+ph/2:.1f}" font-size="12" '
               f'transform="rotate(-90 16 {pad_t+ph/2:.1f})" '
               f'text-anchor="middle">{ylabel}</text>')
    out.append("</svg>")
    return "\n".join(out)


def raster_svg(re_axis, im_axis, values, title: str = "",
               cell_px: int = 8) -> str:
    """Stability raster as filled cells: stable green, unstable white,
    indeterminate grey."""
    re_axis = np.asarray(re_axis)
    im_axis = np.asarray(im_axis)
    values = np.asarray(values)
    ny, nx = values.shape
    pad_l, pad_t, pad_b = 60, 30, 40
    width = pad_l + nx * cell_px + 20
    height = pad_t + ny * cell_px + pad_b
    fill = {1: "#2ca02c", 0: "#ffffff", -1: "#bbbbbb"}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>']
    if title:
        out.append(f'<text x="{width/2:.0f}" y="18" text-anchor="middle" '
                   f'font-size="13">{title}</text>')
    for iy in range(ny):
        # image rows top-to-bottom = largest imaginary part first
        src = ny - 1 - iy
        for ix in range(nx):
            out.append(f'<rect x="{pad_l+ix*cell_px}" y="{pad_t+iy*cell_px}" '
                       f'width="{cell_px}" height="{cell_px}" '
                       f'fill="{fill[int(values[src, ix])]}" '
                       'stroke="#eee" stroke-width="0.5"/>')
    out.append(f'<text x="{pad_l}" y="{height-12}" font-size="11">'
               f'Re: [{re_axis[0]:g}, {re_axis[-1]:g}]  '
               f'Im: [{im_axis[0]:g}, {im_axis[-1]:g}]</text>')
    out.append("</svg>")
    return "\n".join(out)
