"""Hand-rolled SVG rendering of ROC curves."""
from __future__ import annotations

import os
from xml.sax.saxutils import escape

import numpy as np

from .metrics import ROCCurve

WIDTH, HEIGHT = 800, 600
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 30, 40, 60
PLOT_W = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
PLOT_H = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _xy(fpr: float, tpr: float) -> str:
    x = MARGIN_LEFT + fpr * PLOT_W
    y = MARGIN_TOP + (1.0 - tpr) * PLOT_H
    return f"{x:.2f},{y:.2f}"


def _polyline(curve: ROCCurve, color: str, width: float, opacity: float, label: str) -> str:
    pts = " ".join(_xy(f, t) for f, t in zip(curve.fpr.tolist(), curve.tpr.tolist()))
    return (f'<polyline class="roc" data-label="{escape(label)}" fill="none" '
            f'stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}" '
            f'points="{pts}"/>')


def render_roc_svg(folds: list[tuple[str, ROCCurve]], mean: tuple[str, ROCCurve] | None = None,
                   title: str = "ROC curve") -> str:
    """SVG with thin fold curves, a thick mean curve and the chance diagonal.

    The legend AUC is the mean of the fold AUCs when fold curves are given,
    otherwise the AUC of the mean curve itself.
    """
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{escape(title)}</text>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{PLOT_W}" height="{PLOT_H}" '
        f'fill="none" stroke="black"/>',
    ]
    for i in range(11):
        v = i / 10
        x = MARGIN_LEFT + v * PLOT_W
        y = MARGIN_TOP + (1 - v) * PLOT_H
        parts.append(f'<text x="{x:.1f}" y="{MARGIN_TOP + PLOT_H + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{v:.1f}</text>')
        parts.append(f'<text x="{MARGIN_LEFT - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{v:.1f}</text>')
    parts.append(f'<text x="{MARGIN_LEFT + PLOT_W / 2:.0f}" y="{HEIGHT - 15}" '
                 f'text-anchor="middle" font-family="sans-serif" font-size="13">'
                 f'False positive rate</text>')
    parts.append(f'<text x="18" y="{MARGIN_TOP + PLOT_H / 2:.0f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" transform="rotate(-90 18 '
                 f'{MARGIN_TOP + PLOT_H / 2:.0f})">True positive rate</text>')
    parts.append(f'<line class="chance" x1="{MARGIN_LEFT}" y1="{MARGIN_TOP + PLOT_H}" '
                 f'x2="{MARGIN_LEFT + PLOT_W}" y2="{MARGIN_TOP}" stroke="gray" '
                 f'stroke-dasharray="6,4"/>')

    legend = []
    for i, (label, c) in enumerate(folds):
        color = PALETTE[i % len(PALETTE)]
        parts.append(_polyline(c, color, 1, 0.6, label))
        legend.append((color, 1, f"{label} (AUC {c.auc:.2f})"))
    if mean is not None:
        label, c = mean
        auc = float(np.mean([f.auc for _, f in folds])) if folds else c.auc
        parts.append(_polyline(c, "#000080", 3, 1.0, label))
        legend.append(("#000080", 3, f"Mean ROC (AUC {auc:.2f})"))

    lx, ly = MARGIN_LEFT + PLOT_W - 220, MARGIN_TOP + PLOT_H - 18 * len(legend) - 10
    for j, (color, width, text) in enumerate(legend):
        y = ly + 18 * j
        parts.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 24}" y2="{y}" stroke="{color}" '
                     f'stroke-width="{width}"/>')
        parts.append(f'<text class="legend" x="{lx + 30}" y="{y + 4}" '
                     f'font-family="sans-serif" font-size="11">{escape(text)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def split_mean(paths) -> tuple[list[str], str | None]:
    """Separate ``*_mean.csv`` from fold CSVs; with a single file that file is the mean."""
    paths = list(paths)
    means = [p for p in paths if os.path.basename(p).endswith("_mean.csv")]
    if not means and len(paths) == 1:
        return [], paths[0]
    return [p for p in paths if p not in means], (means[-1] if means else None)
