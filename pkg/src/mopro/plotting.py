"""Minimal deterministic SVG line charts for metric curves.

Hand-rolled markup instead of a plotting library so identical inputs
yield byte-identical files (no embedded timestamps or generator ids).
NaN values split a series into segments; an all-NaN or empty chart still
produces a well-formed placeholder.
"""

import math

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 60, 20, 36, 44  # margins


def _fmt(x):
    return format(float(x), ".6g")


def _ticks(lo, hi, n=5):
    if not math.isfinite(lo) or not math.isfinite(hi):
        lo, hi = 0.0, 1.0
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    step = (hi - lo) / n
    return [lo + i * step for i in range(n + 1)], lo, hi


def line_chart(series, title, xlabel, ylabel):
    """Render [(label, xs, ys), ...] to SVG text."""
    points = [
        (x, y)
        for _, xs, ys in series
        for x, y in zip(xs, ys)
        if math.isfinite(x) and math.isfinite(y)
    ]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
    ]
    if not points:
        parts.append(
            f'<text x="{_W / 2}" y="{_H / 2}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13" fill="#888">no data</text>'
        )
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    xt, x_lo, x_hi = _ticks(min(p[0] for p in points), max(p[0] for p in points))
    yt, y_lo, y_hi = _ticks(min(p[1] for p in points), max(p[1] for p in points))
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return _H - _MB - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts.append(
        f'<rect x="{_ML}" y="{_MT}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333" stroke-width="1"/>'
    )
    for tx in xt:
        parts.append(
            f'<line x1="{_fmt(px(tx))}" y1="{_H - _MB}" x2="{_fmt(px(tx))}" '
            f'y2="{_H - _MB + 4}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{_fmt(px(tx))}" y="{_H - _MB + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{_fmt(tx)}</text>'
        )
    for ty in yt:
        parts.append(
            f'<line x1="{_ML - 4}" y1="{_fmt(py(ty))}" x2="{_ML}" '
            f'y2="{_fmt(py(ty))}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{_ML - 6}" y="{_fmt(py(ty) + 3)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{_fmt(ty)}</text>'
        )
    parts.append(
        f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>'
    )
    parts.append(
        f'<text x="14" y="{_H / 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 14 {_H / 2})">{ylabel}</text>'
    )

    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        segment = []
        segments = []
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                segment.append(f"{_fmt(px(x))},{_fmt(py(y))}")
            elif segment:
                segments.append(segment)
                segment = []
        if segment:
            segments.append(segment)
        for seg in segments:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                parts.append(f'<circle cx="{cx}" cy="{cy}" r="2" fill="{color}"/>')
            else:
                parts.append(
                    f'<polyline points="{" ".join(seg)}" fill="none" '
                    f'stroke="{color}" stroke-width="1.5"/>'
                )
        ly = _MT + 14 + 14 * i
        lx = _W - _MR - 120
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 24}" y="{ly}" font-family="sans-serif" '
            f'font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_chart(path, series, title, xlabel, ylabel):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(line_chart(series, title, xlabel, ylabel))
