"""Minimal deterministic SVG line charts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")
DASHES = ("", "6,3", "2,2", "8,3,2,3")


@dataclass(frozen=True)
class PlotSpec:
    x_values: Tuple[float, ...]
    series: Tuple[tuple, ...]          # keys into the table, also used as legend labels
    y_range: Tuple[float, float] = (0.0, 1.0)
    title: str = ""
    x_label: str = "n"
    y_label: str = ""
    width: int = 720
    height: int = 440
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if not self.series:
            raise ValueError("a chart needs at least one series")
        if not self.x_values:
            raise ValueError("a chart needs at least one x value")
        if not self.y_range[1] > self.y_range[0]:
            raise ValueError("y range must be increasing")


def _num(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _tick(v: float) -> str:
    return f"{v:g}"


def render_line_chart(spec: PlotSpec, table: Mapping[tuple, Mapping[float, float]]) -> str:
    """SVG text with one polyline per series; ``table[key][x]`` gives the y values.

    Points missing for some x are skipped. A series absent from ``table``
    is an error.
    """
    missing = [k for k in spec.series if k not in table]
    if missing:
        raise KeyError(f"series not in the summary: {missing}")
    W, H = spec.width, spec.height
    left, right, top, bottom = 60, 190, 36, 50
    pw, ph = W - left - right, H - top - bottom
    xs = sorted(float(x) for x in spec.x_values)
    x0, x1 = xs[0], xs[-1]
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    y0, y1 = spec.y_range

    def px(x):
        return left + (float(x) - x0) / (x1 - x0) * pw

    def py(y):
        y = min(max(float(y), y0), y1)
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>']
    if spec.title:
        out.append(f'<text x="{W / 2:.0f}" y="20" text-anchor="middle" font-size="13">'
                   f'{escape(spec.title)}</text>')
    # axes
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    last_label = None
    for x in xs:
        X = px(x)
        out.append(f'<line x1="{_num(X)}" y1="{top + ph}" x2="{_num(X)}" y2="{top + ph + 4}" stroke="black"/>')
        # crowded labels at the low end of a linear axis are dropped
        if last_label is None or X - last_label >= 26:
            out.append(f'<text x="{_num(X)}" y="{top + ph + 16}" text-anchor="middle">{_tick(x)}</text>')
            last_label = X
    for i in range(6):
        y = y0 + (y1 - y0) * i / 5
        Y = py(y)
        out.append(f'<line x1="{left - 4}" y1="{_num(Y)}" x2="{left}" y2="{_num(Y)}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{_num(Y)}" x2="{left + pw}" y2="{_num(Y)}" '
                   f'stroke="#dddddd" stroke-width="0.5"/>')
        out.append(f'<text x="{left - 7}" y="{_num(Y + 4)}" text-anchor="end">{_tick(round(y, 6))}</text>')
    out.append(f'<text x="{left + pw / 2:.0f}" y="{H - 12}" text-anchor="middle">{escape(spec.x_label)}</text>')
    if spec.y_label:
        out.append(f'<text x="14" y="{top + ph / 2:.0f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2:.0f})">{escape(spec.y_label)}</text>')
    labels = spec.labels or tuple(" ".join(str(p) for p in k) if isinstance(k, tuple) else str(k)
                                  for k in spec.series)
    for i, key in enumerate(spec.series):
        color = PALETTE[i % len(PALETTE)]
        dash = DASHES[(i // len(PALETTE)) % len(DASHES)]
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        pts = [(x, table[key][x]) for x in xs if x in table[key] and table[key][x] is not None]
        coords = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"{dash_attr}/>')
        ly = top + 8 + 16 * i
        lx = left + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="1.5"{dash_attr}/>')
        out.append(f'<text x="{lx + 28}" y="{ly + 4}">{escape(labels[i])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
