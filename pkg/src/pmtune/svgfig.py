"""Minimal static SVG line plots; CSV is the authoritative output format."""

from __future__ import annotations

import math

__all__ = ["line_plot_svg"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * step:
        out.append(round(t, 12))
        t += step
    return out


def line_plot_svg(path, series, title="", xlabel="", ylabel="", width=640, height=420,
                  log_y=False):
    """Write a multi-series line plot.

    ``series`` is a list of ``(label, xs, ys)``; non-finite points are
    dropped.  With ``log_y`` the y axis is base-10 logarithmic.
    """
    margin_l, margin_r, margin_t, margin_b = 64, 140, 36, 46
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    cleaned = []
    for label, xs, ys in series:
        pts = [
            (float(x), math.log10(float(y)) if log_y else float(y))
            for x, y in zip(xs, ys)
            if math.isfinite(float(x)) and math.isfinite(float(y)) and (not log_y or y > 0)
        ]
        if pts:
            cleaned.append((label, pts))
    if not cleaned:
        raise ValueError("nothing to plot")
    all_x = [p[0] for _, pts in cleaned for p in pts]
    all_y = [p[1] for _, pts in cleaned for p in pts]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.04 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return margin_l + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return margin_t + (y_hi - y) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin_l}" y="{margin_t}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#444"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
            f'font-size="14">{title}</text>'
        )
    for t in _ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{sx(t):.1f}" y1="{margin_t + plot_h}" x2="{sx(t):.1f}" '
            f'y2="{margin_t + plot_h + 4}" stroke="#444"/>'
            f'<text x="{sx(t):.1f}" y="{margin_t + plot_h + 17}" '
            f'text-anchor="middle">{t:g}</text>'
        )
    for t in _ticks(y_lo, y_hi):
        label = f"1e{t:g}" if log_y else f"{t:g}"
        parts.append(
            f'<line x1="{margin_l - 4}" y1="{sy(t):.1f}" x2="{margin_l}" '
            f'y2="{sy(t):.1f}" stroke="#444"/>'
            f'<text x="{margin_l - 7}" y="{sy(t) + 4:.1f}" text-anchor="end">{label}</text>'
        )
    if xlabel:
        parts.append(
            f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 8}" '
            f'text-anchor="middle">{xlabel}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="16" y="{margin_t + plot_h / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {margin_t + plot_h / 2:.1f})">{ylabel}</text>'
        )
    for i, (label, pts) in enumerate(cleaned):
        color = _COLORS[i % len(_COLORS)]
        path_d = " ".join(f"{'M' if j == 0 else 'L'}{sx(x):.2f},{sy(y):.2f}"
                          for j, (x, y) in enumerate(pts))
        parts.append(f'<path d="{path_d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = margin_t + 14 + 16 * i
        parts.append(
            f'<line x1="{margin_l + plot_w + 8}" y1="{ly - 4}" '
            f'x2="{margin_l + plot_w + 28}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
            f'<text x="{margin_l + plot_w + 32}" y="{ly}">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
