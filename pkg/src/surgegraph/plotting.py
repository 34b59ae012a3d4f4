"""Minimal hand-rolled SVG line plots.

Matplotlib embeds timestamps and random ids in its SVG output; these writers
emit byte-identical files for identical inputs, which the pipeline's
determinism guarantees rely on.
"""

from __future__ import annotations

import numpy as np

MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 30, 45

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#d62728", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


def line_plot_svg(series, title="", x_label="", y_label="", width=760, height=420,
                  hlines=()):
    """Render labelled (xs, ys) polylines; ``hlines`` draws named levels.

    ``series`` is a list of (label, xs, ys) or (label, xs, ys, color) tuples;
    NaN samples break the polyline.
    """
    plot_w = width - MARGIN_L - MARGIN_R
    plot_h = height - MARGIN_T - MARGIN_B
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys_list = [np.asarray(s[2], dtype=float) for s in series]
    ys_all = np.concatenate([y[np.isfinite(y)] for y in ys_list])
    if hlines:
        ys_all = np.concatenate([ys_all, [lv for _, lv in hlines]])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pad = 0.05 * (y_hi - y_lo or 1.0)
    y_lo -= pad
    y_hi += pad

    def sx(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
           'fill="none" stroke="#999"/>']
    if title:
        out.append(f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" '
                   f'font-size="13">{title}</text>')
    for tx in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{sx(tx):.1f}" y1="{MARGIN_T + plot_h}" '
                   f'x2="{sx(tx):.1f}" y2="{MARGIN_T + plot_h + 4}" stroke="#333"/>')
        out.append(f'<text x="{sx(tx):.1f}" y="{MARGIN_T + plot_h + 16}" '
                   f'text-anchor="middle">{tx:.4g}</text>')
    for ty in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{MARGIN_L - 4}" y1="{sy(ty):.1f}" x2="{MARGIN_L}" '
                   f'y2="{sy(ty):.1f}" stroke="#333"/>')
        out.append(f'<text x="{MARGIN_L - 7}" y="{sy(ty) + 3:.1f}" '
                   f'text-anchor="end">{ty:.4g}</text>')
    if x_label:
        out.append(f'<text x="{width / 2:.0f}" y="{height - 8}" '
                   f'text-anchor="middle">{x_label}</text>')
    if y_label:
        out.append(f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {height / 2:.0f})">{y_label}</text>')
    for name, level in hlines:
        out.append(f'<line x1="{MARGIN_L}" y1="{sy(level):.1f}" '
                   f'x2="{MARGIN_L + plot_w}" y2="{sy(level):.1f}" stroke="#888" '
                   'stroke-dasharray="5,4"/>')
        out.append(f'<text x="{MARGIN_L + plot_w - 4}" y="{sy(level) - 3:.1f}" '
                   f'text-anchor="end" fill="#666">{name}</text>')
    for k, entry in enumerate(series):
        label, xs, ys = entry[0], np.asarray(entry[1], float), np.asarray(entry[2], float)
        color = entry[3] if len(entry) > 3 else PALETTE[k % len(PALETTE)]
        runs = []
        cur = []
        for x, y in zip(xs, ys):
            if np.isfinite(y):
                cur.append(f"{sx(x):.1f},{sy(y):.1f}")
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.4" '
                       f'points="{" ".join(run)}"/>')
        ly = MARGIN_T + 14 + 14 * k
        out.append(f'<line x1="{MARGIN_L + 8}" y1="{ly - 4}" x2="{MARGIN_L + 28}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{MARGIN_L + 33}" y="{ly}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_svg(svg_text, path):
    with open(path, "w") as fh:
        fh.write(svg_text)
