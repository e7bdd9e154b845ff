"""Static SVG renderings of frontiers and anchor shape distributions.

SVG is written directly: the outputs are small, textual, diffable, and the
renderer stays dependency-free. Frontier plots show one marker per entry and
a staircase along the dominated-region boundary; shape plots show per-anchor
log-space heatmaps with marginal curves.
"""

from __future__ import annotations

import math
from typing import Iterable

from .search import Frontier, FrontierEntry
from .synth import ShapeDistribution

_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _fmt(value: float) -> str:
    return f"{value:.2f}".rstrip("0").rstrip(".")


def _si(value: float) -> str:
    for divisor, suffix in ((1e9, "B"), (1e6, "M"), (1e3, "k")):
        if abs(value) >= divisor:
            return f"{value / divisor:.4g}{suffix}"
    return f"{value:.4g}"


class _Canvas:
    width = 640
    height = 440
    margin_left = 70
    margin_right = 20
    margin_top = 30
    margin_bottom = 50

    def __init__(self, x_range: tuple[float, float], y_range: tuple[float, float]):
        x_lo, x_hi = x_range
        y_lo, y_hi = y_range
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0
        if y_hi <= y_lo:
            y_hi = y_lo + 1.0
        self.x_lo, self.x_hi = x_lo, x_hi
        self.y_lo, self.y_hi = y_lo, y_hi

    def x(self, value: float) -> float:
        span = self.width - self.margin_left - self.margin_right
        return self.margin_left + (value - self.x_lo) / (self.x_hi - self.x_lo) * span

    def y(self, value: float) -> float:
        span = self.height - self.margin_top - self.margin_bottom
        return self.height - self.margin_bottom - (value - self.y_lo) / (self.y_hi - self.y_lo) * span


def _axes(canvas: _Canvas, x_label: str, y_label: str, title: str, x_si: bool) -> list[str]:
    parts = [
        f'<rect x="{canvas.margin_left}" y="{canvas.margin_top}" '
        f'width="{canvas.width - canvas.margin_left - canvas.margin_right}" '
        f'height="{canvas.height - canvas.margin_top - canvas.margin_bottom}" '
        'fill="none" stroke="#444" stroke-width="1"/>',
        f'<text x="{canvas.width / 2:.1f}" y="18" text-anchor="middle" '
        f'font-size="14" class="title">{title}</text>',
        f'<text x="{canvas.width / 2:.1f}" y="{canvas.height - 12}" '
        f'text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="16" y="{canvas.height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {canvas.height / 2:.1f})">{y_label}</text>',
    ]
    for i in range(5):
        frac = i / 4
        xv = canvas.x_lo + frac * (canvas.x_hi - canvas.x_lo)
        yv = canvas.y_lo + frac * (canvas.y_hi - canvas.y_lo)
        gx, gy = canvas.x(xv), canvas.y(yv)
        bottom = canvas.height - canvas.margin_bottom
        parts.append(
            f'<line x1="{gx:.1f}" y1="{bottom}" x2="{gx:.1f}" y2="{bottom + 5}" stroke="#444"/>'
        )
        label = _si(xv) if x_si else _fmt(xv)
        parts.append(
            f'<text x="{gx:.1f}" y="{bottom + 18}" text-anchor="middle" font-size="10">{label}</text>'
        )
        parts.append(
            f'<line x1="{canvas.margin_left - 5}" y1="{gy:.1f}" x2="{canvas.margin_left}" '
            f'y2="{gy:.1f}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{canvas.margin_left - 8}" y="{gy + 3:.1f}" text-anchor="end" '
            f'font-size="10">{_fmt(yv)}</text>'
        )
    return parts


def frontier_svg(
    frontier: Frontier,
    *,
    title: str = "Accuracy vs resource cost",
    x_label: str = "resource cost",
    baseline: Iterable[FrontierEntry] = (),
    highlight: FrontierEntry | None = None,
) -> str:
    """Scatter plus staircase for a frontier, optional baseline point cloud."""
    entries = list(frontier.entries)
    baseline = list(baseline)
    costs = [e.cost for e in entries] + [e.cost for e in baseline]
    accs = [e.accuracy for e in entries] + [e.accuracy for e in baseline]
    if highlight is not None:
        costs.append(highlight.cost)
        accs.append(highlight.accuracy)
    if not costs:
        costs, accs = [0.0, 1.0], [0.0, 1.0]
    pad_x = 0.05 * (max(costs) - min(costs) or 1.0)
    pad_y = 0.05 * (max(accs) - min(accs) or 0.1)
    canvas = _Canvas(
        (min(costs) - pad_x, max(costs) + pad_x),
        (max(0.0, min(accs) - pad_y), min(1.0, max(accs) + pad_y)),
    )
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{canvas.width}" '
        f'height="{canvas.height}" viewBox="0 0 {canvas.width} {canvas.height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    parts.extend(_axes(canvas, x_label, "accuracy", title, x_si=True))
    for entry in baseline:
        parts.append(
            f'<circle class="baseline-point" cx="{canvas.x(entry.cost):.1f}" '
            f'cy="{canvas.y(entry.accuracy):.1f}" r="3" fill="#bbb"/>'
        )
    if entries:
        steps = [f"M {canvas.x(entries[0].cost):.1f} {canvas.y(entries[0].accuracy):.1f}"]
        for previous, current in zip(entries, entries[1:]):
            steps.append(f"H {canvas.x(current.cost):.1f}")
            steps.append(f"V {canvas.y(current.accuracy):.1f}")
        right_edge = canvas.width - canvas.margin_right
        steps.append(f"H {right_edge:.1f}")
        parts.append(
            f'<path class="staircase" d="{" ".join(steps)}" fill="none" '
            'stroke="#ff7f0e" stroke-width="2"/>'
        )
    for entry in entries:
        parts.append(
            f'<circle class="frontier-marker" cx="{canvas.x(entry.cost):.1f}" '
            f'cy="{canvas.y(entry.accuracy):.1f}" r="4" fill="#ff7f0e">'
            f"<title>{entry.encoding}: cost {entry.cost}, accuracy "
            f"{entry.accuracy:.4f}</title></circle>"
        )
    if highlight is not None:
        parts.append(
            f'<circle class="highlight-marker" cx="{canvas.x(highlight.cost):.1f}" '
            f'cy="{canvas.y(highlight.accuracy):.1f}" r="5" fill="#1f77b4"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def shape_distribution_svg(dist: ShapeDistribution, *, title: str = "Predicted box shapes per anchor") -> str:
    """Log-space shape heatmaps, one hue per anchor, with width/height marginals."""
    w_edges = dist.log_width_edges
    h_edges = dist.log_height_edges
    canvas = _Canvas((float(w_edges[0]), float(w_edges[-1])), (float(h_edges[0]), float(h_edges[-1])))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{canvas.width}" '
        f'height="{canvas.height}" viewBox="0 0 {canvas.width} {canvas.height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    parts.extend(_axes(canvas, "log width (px)", "log height (px)", title, x_si=False))
    for index, hist in enumerate(dist.anchors):
        color = _PALETTE[index % len(_PALETTE)]
        peak = hist.counts.max() if hist.total else 0
        group = [f'<g class="anchor-panel" data-layer="{hist.anchor.layer_index}" data-slot="{hist.anchor.slot_index}">']
        if peak:
            for i in range(hist.counts.shape[0]):
                for j in range(hist.counts.shape[1]):
                    count = hist.counts[i][j]
                    if count == 0:
                        continue
                    x0 = canvas.x(float(w_edges[i]))
                    x1 = canvas.x(float(w_edges[i + 1]))
                    y0 = canvas.y(float(h_edges[j + 1]))
                    y1 = canvas.y(float(h_edges[j]))
                    opacity = 0.15 + 0.55 * (count / peak)
                    group.append(
                        f'<rect class="shape-bin" x="{x0:.1f}" y="{y0:.1f}" '
                        f'width="{x1 - x0:.1f}" height="{y1 - y0:.1f}" '
                        f'fill="{color}" fill-opacity="{opacity:.2f}"/>'
                    )
        if hist.shape is not None:
            mx = canvas.x(math.log(hist.shape.width))
            my = canvas.y(math.log(hist.shape.height))
            group.append(
                f'<path class="anchor-marker" d="M {mx - 4:.1f} {my:.1f} H {mx + 4:.1f} '
                f'M {mx:.1f} {my - 4:.1f} V {my + 4:.1f}" stroke="{color}" stroke-width="2"/>'
            )
        group.append("</g>")
        parts.extend(group)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
