"""Minimal deterministic SVG line charts.

Hand-rolled on purpose: the output must be byte-for-byte reproducible for a
given run, so no plotting library (whose output embeds versions, ids, or
float-formatting quirks) is involved. Coordinates are formatted with a fixed
precision and everything is a pure function of the input series.
"""

from __future__ import annotations

import math

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _finite(values) -> list[float]:
    return [v for v in values if isinstance(v, (int, float)) and math.isfinite(v)]


def _axis_range(series) -> tuple[float, float]:
    lo, hi = math.inf, -math.inf
    for _, _, ys in series:
        for v in _finite(ys):
            lo, hi = min(lo, v), max(hi, v)
    if lo is math.inf:
        lo, hi = 0.0, 1.0
    if hi - lo < 1e-12:
        pad = max(abs(hi), 1.0) * 0.1
        lo, hi = lo - pad, hi + pad
    return lo, hi


def _panel(series, title, x0, width, height, margin) -> list[str]:
    """One chart panel; ``series`` is a list of (label, xs, ys)."""
    left, right = x0 + margin, x0 + width - 15
    top, bottom = 35, height - margin
    xs_all = [x for _, xs, _ in series for x in xs]
    x_lo, x_hi = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    if x_hi - x_lo < 1e-12:
        x_hi = x_lo + 1.0
    y_lo, y_hi = _axis_range(series)

    def px(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * (right - left)

    def py(y: float) -> float:
        return bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top)

    out = [
        f'<text x="{_fmt((left + right) / 2)}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(right - left)}" '
        f'height="{_fmt(bottom - top)}" fill="none" stroke="#999"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        xv = x_lo + frac * (x_hi - x_lo)
        out.append(
            f'<text x="{_fmt(left - 5)}" y="{_fmt(py(yv) + 4)}" text-anchor="end" font-size="10">{yv:.4g}</text>'
        )
        out.append(
            f'<text x="{_fmt(px(xv))}" y="{_fmt(bottom + 14)}" text-anchor="middle" font-size="10">{xv:.4g}</text>'
        )
    for k, (label, xs, ys) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(
            f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys) if math.isfinite(y)
        )
        if pts:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 + 14 * k
        out.append(f'<line x1="{_fmt(left + 6)}" y1="{_fmt(ly - 4)}" x2="{_fmt(left + 26)}" y2="{_fmt(ly - 4)}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{_fmt(left + 30)}" y="{_fmt(ly)}" font-size="11">{label}</text>')
    return out


def curves_svg(panels: list[tuple[str, list[tuple[str, list, list]]]], width: int = 480, height: int = 360) -> str:
    """Side-by-side panels, each a titled list of (label, xs, ys) series."""
    total_w = width * len(panels)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{height}" '
        f'viewBox="0 0 {total_w} {height}">',
        f'<rect width="{total_w}" height="{height}" fill="white"/>',
    ]
    for i, (title, series) in enumerate(panels):
        parts.extend(_panel(series, title, i * width, width, height, margin=45))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
