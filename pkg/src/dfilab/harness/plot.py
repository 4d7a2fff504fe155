"""Dependency-free SVG scatter panels (real / generated / reconstructed point sets)."""

from __future__ import annotations

import json
from xml.sax.saxutils import escape, quoteattr

import numpy as np

WIDTH = 480
HEIGHT = 480
MARGIN = 40
LEGEND_ROW = 16

PALETTE = {
    "real": "#2ca02c",
    "generated": "#ff7f0e",
    "reconstructed": "#1f77b4",
}
DEFAULT_COLORS = ("#2ca02c", "#ff7f0e", "#1f77b4", "#d62728", "#9467bd", "#8c564b")


def _style(style, i: int) -> dict:
    if style is None:
        style = {}
    elif isinstance(style, str):
        style = {"color": style}
    return {
        "color": style.get("color", DEFAULT_COLORS[i % len(DEFAULT_COLORS)]),
        "radius": float(style.get("radius", 2.0)),
        "opacity": float(style.get("opacity", 0.7)),
    }


def to_viewport(points, bounds, width: int = WIDTH, height: int = HEIGHT) -> np.ndarray:
    """Affine map from data coordinates to SVG pixels (y axis pointing up)."""
    xmin, xmax, ymin, ymax = bounds
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    sx = (width - 2 * MARGIN) / (xmax - xmin)
    sy = (height - 2 * MARGIN) / (ymax - ymin)
    return np.column_stack([MARGIN + (p[:, 0] - xmin) * sx, height - MARGIN - (p[:, 1] - ymin) * sy])


def _f(v: float) -> str:
    return f"{v:.3f}"


def emit_scatter_svg(layers, bounds, *, title: str | None = None, metadata: dict | None = None,
                     width: int = WIDTH, height: int = HEIGHT) -> str:
    """SVG document with one marker group and one legend entry per ``(label, points, style)`` layer."""
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"degenerate bounds {bounds}")
    checked = []
    for i, (label, pts, style) in enumerate(layers):
        p = np.asarray(pts, dtype=np.float64)
        if p.size == 0:
            p = p.reshape(0, 2)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError(f"layer {label!r}: points must be 2-D, got shape {p.shape}")
        checked.append((str(label), p, _style(style, i)))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
    ]
    if metadata:
        out.append(f"<metadata>{escape(json.dumps(metadata, sort_keys=True, separators=(',', ':')))}</metadata>")
    out.append(
        f'<defs><clipPath id="plot-area"><rect x="{MARGIN}" y="{MARGIN}" '
        f'width="{width - 2 * MARGIN}" height="{height - 2 * MARGIN}"/></clipPath></defs>'
    )
    out.append('<rect width="100%" height="100%" fill="white"/>')
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="{MARGIN / 2:.1f}" text-anchor="middle" font-size="14">{escape(title)}</text>')

    # axes: frame plus tick labels at the bounds and the midpoint
    out.append('<g class="axes" stroke="#444" fill="none">')
    out.append(f'<rect x="{MARGIN}" y="{MARGIN}" width="{width - 2 * MARGIN}" height="{height - 2 * MARGIN}"/>')
    out.append("</g>")
    out.append('<g class="ticks" font-size="10" fill="#444">')
    for xv in (xmin, (xmin + xmax) / 2, xmax):
        (px, _), = to_viewport([[xv, ymin]], bounds, width, height)
        out.append(f'<text x="{_f(px)}" y="{height - MARGIN + 14}" text-anchor="middle">{xv:g}</text>')
    for yv in (ymin, (ymin + ymax) / 2, ymax):
        (_, py), = to_viewport([[xmin, yv]], bounds, width, height)
        out.append(f'<text x="{MARGIN - 4}" y="{_f(py + 3)}" text-anchor="end">{yv:g}</text>')
    out.append("</g>")

    for label, p, st in checked:
        out.append(
            f'<g class="layer" data-label={quoteattr(label)} fill="{st["color"]}" '
            f'fill-opacity="{st["opacity"]}" clip-path="url(#plot-area)">'
        )
        for cx, cy in to_viewport(p, bounds, width, height) if len(p) else ():
            out.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{st["radius"]:g}"/>')
        out.append("</g>")

    out.append('<g class="legend" font-size="11">')
    for i, (label, _, st) in enumerate(checked):
        y = MARGIN + 12 + i * LEGEND_ROW
        x = width - MARGIN - 110
        out.append(
            f'<g class="legend-entry"><circle cx="{x}" cy="{y - 4}" r="4" fill="{st["color"]}"/>'
            f'<text x="{x + 8}" y="{y}">{escape(label)}</text></g>'
        )
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
