"""Minimal self-contained SVG line plots for diagnostic sequences."""

from __future__ import annotations

import json
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def line_plot(
    series: dict,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    logy: bool = False,
    path: Optional[str] = None,
    manifest: Optional[dict] = None,
) -> str:
    """``series`` maps a label to an (x, y) pair. Non-finite or (for log axes) non-positive points are dropped.

    ``manifest`` is embedded as an XML comment.
    """
    cleaned = {}
    for label, (x, y) in series.items():
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logy:
            keep &= y > 0
            y = np.where(keep, np.log10(np.where(y > 0, y, 1.0)), 0.0)
        cleaned[label] = (x[keep], y[keep])
    xs = np.concatenate([v[0] for v in cleaned.values()] or [np.zeros(1)])
    ys = np.concatenate([v[1] for v in cleaned.values()] or [np.zeros(1)])
    if xs.size == 0:
        xs, ys = np.zeros(1), np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN)

    def sy(v):
        return HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    if manifest is not None:
        # "--" is not allowed inside XML comments
        out.insert(1, f"<!-- manifest: {json.dumps(manifest, sort_keys=True).replace('--', '- -')} -->")
    for v in _ticks(x0, x1):
        out.append(f'<text x="{sx(v):.1f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        lab = f"1e{v:.2g}" if logy else f"{v:.3g}"
        out.append(f'<text x="{MARGIN - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 14}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 16 {HEIGHT / 2})">'
        f"{escape(ylabel)}</text>"
    )
    for i, (label, (x, y)) in enumerate(cleaned.items()):
        color = COLORS[i % len(COLORS)]
        if len(x):
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
            for a, b in zip(x, y):
                out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="{color}"/>')
        ly = MARGIN + 14 * i
        out.append(f'<text x="{WIDTH - MARGIN}" y="{ly}" text-anchor="end" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def sequence_plot(values: Sequence[float], floors: Sequence[float] = (), **kw) -> str:
    """Plot a statistic against its index, with the noise floor when given."""
    idx = np.arange(len(values))
    series = {"statistic": (idx, values)}
    if len(floors):
        series["noise floor"] = (np.arange(len(floors)), floors)
    return line_plot(series, **kw)
