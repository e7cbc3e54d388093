"""Dependency-free SVG charts with byte-deterministic output."""

from __future__ import annotations

from typing import Sequence

_PALETTE = ("#2a7de1", "#d64545", "#3aa655", "#b58a2a", "#7a4fb0", "#4aa3a3")


def _fmt(x: float) -> str:
    return f"{float(x):.4f}".rstrip("0").rstrip(".")


def _axis_range(lo: float, hi: float) -> tuple[float, float]:
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _header(width: int, height: int, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width // 2}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]


def bar_chart(values: Sequence[float], labels: Sequence[str], *,
              title: str = "", y_label: str = "",
              colors: Sequence[str] | None = None,
              whiskers: Sequence[float] | None = None,
              threshold: float | None = None,
              width: int = 720, height: int = 320) -> str:
    """Vertical bars with optional error whiskers and a threshold line."""
    n = len(values)
    left, right, top, bottom = 56, 16, 32, 48
    plot_w, plot_h = width - left - right, height - top - bottom
    hi = max(list(values) + ([threshold] if threshold is not None else [0.0]))
    if whiskers is not None:
        hi = max(hi, max(v + w for v, w in zip(values, whiskers)))
    lo, hi = _axis_range(0.0, float(hi))

    def y_of(v: float) -> float:
        return top + plot_h * (1.0 - (v - lo) / (hi - lo))

    parts = _header(width, height, title)
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" '
                 f'y2="{top + plot_h}" stroke="#444444"/>')
    parts.append(f'<line x1="{left}" y1="{top + plot_h}" '
                 f'x2="{left + plot_w}" y2="{top + plot_h}" stroke="#444444"/>')
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        parts.append(f'<text x="{left - 6}" y="{_fmt(y_of(v) + 4)}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{_fmt(v)}</text>')
    if y_label:
        parts.append(f'<text x="14" y="{top + plot_h // 2}" '
                     f'font-family="sans-serif" font-size="11" '
                     f'transform="rotate(-90 14 {top + plot_h // 2})" '
                     f'text-anchor="middle">{y_label}</text>')
    slot = plot_w / max(n, 1)
    bar_w = 0.6 * slot
    for i, v in enumerate(values):
        x = left + i * slot + (slot - bar_w) / 2.0
        color = (colors[i] if colors is not None
                 else _PALETTE[i % len(_PALETTE)])
        parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y_of(v))}" '
                     f'width="{_fmt(bar_w)}" '
                     f'height="{_fmt(y_of(lo) - y_of(v))}" fill="{color}"/>')
        if whiskers is not None and whiskers[i] > 0:
            cx = x + bar_w / 2.0
            parts.append(f'<line x1="{_fmt(cx)}" y1="{_fmt(y_of(v - whiskers[i]))}" '
                         f'x2="{_fmt(cx)}" y2="{_fmt(y_of(v + whiskers[i]))}" '
                         f'stroke="#222222"/>')
        parts.append(f'<text x="{_fmt(x + bar_w / 2.0)}" '
                     f'y="{height - bottom + 14}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="9">{labels[i]}</text>')
    if threshold is not None:
        parts.append(f'<line x1="{left}" y1="{_fmt(y_of(threshold))}" '
                     f'x2="{left + plot_w}" y2="{_fmt(y_of(threshold))}" '
                     f'stroke="#555555" stroke-dasharray="5,3"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def line_chart(series: Sequence[tuple[str, Sequence[float], Sequence[float]]], *,
               title: str = "", x_label: str = "", y_label: str = "",
               width: int = 720, height: int = 320) -> str:
    """Overlaid polylines with a small legend; one color per series."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    x_lo, x_hi = _axis_range(min(xs_all), max(xs_all))
    y_lo, y_hi = _axis_range(min(ys_all), max(ys_all))
    left, right, top, bottom = 56, 16, 32, 40
    plot_w, plot_h = width - left - right, height - top - bottom

    def x_of(v: float) -> float:
        return left + plot_w * (v - x_lo) / (x_hi - x_lo)

    def y_of(v: float) -> float:
        return top + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo))

    parts = _header(width, height, title)
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" '
                 f'y2="{top + plot_h}" stroke="#444444"/>')
    parts.append(f'<line x1="{left}" y1="{top + plot_h}" '
                 f'x2="{left + plot_w}" y2="{top + plot_h}" stroke="#444444"/>')
    for frac in (0.0, 0.5, 1.0):
        v = y_lo + frac * (y_hi - y_lo)
        parts.append(f'<text x="{left - 6}" y="{_fmt(y_of(v) + 4)}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{_fmt(v)}</text>')
        v = x_lo + frac * (x_hi - x_lo)
        parts.append(f'<text x="{_fmt(x_of(v))}" y="{top + plot_h + 14}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{_fmt(v)}</text>')
    if x_label:
        parts.append(f'<text x="{left + plot_w // 2}" y="{height - 6}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{x_label}</text>')
    if y_label:
        parts.append(f'<text x="14" y="{top + plot_h // 2}" '
                     f'font-family="sans-serif" font-size="11" '
                     f'transform="rotate(-90 14 {top + plot_h // 2})" '
                     f'text-anchor="middle">{y_label}</text>')
    for i, (name, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(f"{_fmt(x_of(x))},{_fmt(y_of(y))}"
                          for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 + 14 * i
        parts.append(f'<line x1="{left + plot_w - 110}" y1="{ly - 4}" '
                     f'x2="{left + plot_w - 90}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + plot_w - 84}" y="{ly}" '
                     f'font-family="sans-serif" font-size="10">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
