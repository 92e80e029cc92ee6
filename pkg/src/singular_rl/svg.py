"""Minimal static SVG line charts (stacked panels sharing an x axis)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


@dataclass
class Panel:
    title: str
    ys: np.ndarray
    reference: Optional[float] = None
    color: str = COLORS[0]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _panel_svg(p: Panel, xs, x0, y0, w, h) -> list[str]:
    ys = np.asarray(p.ys, dtype=float)
    finite = ys[np.isfinite(ys)]
    vals = list(finite) + ([p.reference] if p.reference is not None else [])
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    xl = float(xs[0])
    xh = float(xs[-1]) if len(xs) > 1 else xl + 1.0

    def px(x):
        return x0 + (x - xl) / (xh - xl) * w

    def py(y):
        return y0 + h - (y - lo) / (hi - lo) * h

    out = [
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>',
        f'<text x="{x0 + 4}" y="{y0 - 6}" font-size="13">{p.title}</text>',
        f'<text x="{x0 - 6}" y="{y0 + 10}" font-size="10" text-anchor="end">{_fmt(hi)}</text>',
        f'<text x="{x0 - 6}" y="{y0 + h}" font-size="10" text-anchor="end">{_fmt(lo)}</text>',
    ]
    if p.reference is not None:
        yr = py(p.reference)
        out.append(
            f'<line x1="{x0}" y1="{yr:.2f}" x2="{x0 + w}" y2="{yr:.2f}" '
            f'stroke="#888" stroke-dasharray="5,4"/>'
        )
    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys) if np.isfinite(y))
    out.append(f'<polyline points="{pts}" fill="none" stroke="{p.color}" stroke-width="1.5"/>')
    return out


def line_panels(xs: Sequence[float], panels: Sequence[Panel], xlabel: str = "", width: int = 640) -> str:
    """Render panels stacked vertically; output depends only on the data."""
    xs = np.asarray(xs, dtype=float)
    left, top, ph, gap = 70, 30, 160, 50
    pw = width - left - 20
    height = top + len(panels) * (ph + gap) + 10
    body = []
    for k, p in enumerate(panels):
        body += _panel_svg(p, xs, left, top + k * (ph + gap), pw, ph)
    body.append(
        f'<text x="{left + pw / 2}" y="{height - 12}" font-size="12" text-anchor="middle">{xlabel}</text>'
    )
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"
