"""Minimal SVG line charts for threshold sweeps."""
from __future__ import annotations

from typing import Dict
from xml.sax.saxutils import escape

from .metrics import MetricCurve

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
           "#17becf"]


def curves_svg(curves: Dict[str, MetricCurve], metric: str = "precision", title: str = "",
               width: int = 640, height: int = 400) -> str:
    """One polyline per named curve; x is threshold in cm, y is percent."""
    left, right, top, bottom = 56, 150, 30, 44
    pw, ph = width - left - right, height - top - bottom
    xmax = max((float(c.thresholds.max()) for c in curves.values()), default=0.06) * 100.0 or 1.0

    def sx(d_cm):
        return left + pw * d_cm / xmax

    def sy(pct):
        return top + ph * (1.0 - pct / 100.0)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>')
    for pct in range(0, 101, 20):
        y = sy(pct)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{pct}</text>')
    steps = 6
    for k in range(steps + 1):
        d = xmax * k / steps
        x = sx(d)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="#333"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{d:g}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 8}" text-anchor="middle">threshold (cm)</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.2f}" transform="rotate(-90 14 {top + ph / 2:.2f})" '
               f'text-anchor="middle">{escape(metric)} (%)</text>')
    for i, (name, c) in enumerate(curves.items()):
        color = PALETTE[i % len(PALETTE)]
        values = getattr(c, metric)
        pts = " ".join(f"{sx(d * 100.0):.2f},{sy(v):.2f}" for d, v in zip(c.thresholds, values))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
