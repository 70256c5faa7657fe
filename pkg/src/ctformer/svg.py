"""Minimal hand-emitted SVG line charts (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def line_chart(series, path, title: str = "", width: int = 720, height: int = 320) -> None:
    """Write a line chart of one or more (label, values) series to ``path``.

    Values may contain nan (those points are skipped). The output is
    deterministic for identical inputs.
    """
    pad = 42
    plot_w, plot_h = width - 2 * pad, height - 2 * pad
    arrays = [np.asarray(vals, dtype=np.float64) for _, vals in series]
    finite = np.concatenate([a[np.isfinite(a)] for a in arrays]) if arrays else np.array([0.0])
    if finite.size == 0:
        finite = np.array([0.0])
    lo, hi = float(finite.min()), float(finite.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    n_max = max(a.size for a in arrays)

    def sx(i: float) -> float:
        return pad + (plot_w * i / max(n_max - 1, 1))

    def sy(v: float) -> float:
        return pad + plot_h * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#888" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="{pad - 14}" text-anchor="middle" '
            f'font-family="monospace" font-size="13">{_escape(title)}</text>'
        )
    parts.append(
        f'<text x="{pad - 6}" y="{pad + 4}" text-anchor="end" '
        f'font-family="monospace" font-size="10">{hi:.4g}</text>'
    )
    parts.append(
        f'<text x="{pad - 6}" y="{pad + plot_h + 4}" text-anchor="end" '
        f'font-family="monospace" font-size="10">{lo:.4g}</text>'
    )
    for s, ((label, _), vals) in enumerate(zip(series, arrays)):
        color = PALETTE[s % len(PALETTE)]
        points = " ".join(
            f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(vals) if np.isfinite(v)
        )
        if points:
            parts.append(
                f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.2"/>'
            )
        parts.append(
            f'<text x="{pad + 8 + 130 * s}" y="{height - 10}" fill="{color}" '
            f'font-family="monospace" font-size="11">{_escape(label)}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
