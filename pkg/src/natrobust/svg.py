"""Tiny deterministic SVG chart writer (line, scatter, step and heatmap).

Every data series is wrapped in ``<g class="series" data-series="NAME">`` so
outputs can be checked against the CSV tables they were drawn from.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape, quoteattr

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=170, top=40, bottom=55)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
          "#e377c2", "#17becf", "#7f7f7f", "#bcbd22", "#393b79", "#637939")


def _num(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _range(values, pad=0.05):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


class _Canvas:
    def __init__(self, title, xlabel, ylabel, xr, yr):
        self.xr, self.yr = xr, yr
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
            f'<title>{escape(title)}</title>',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        ]
        self._axes(xlabel, ylabel)
        self.n_series = 0

    def sx(self, x):
        lo, hi = self.xr
        return self.x0 + (x - lo) / (hi - lo) * (self.x1 - self.x0)

    def sy(self, y):
        lo, hi = self.yr
        return self.y0 - (y - lo) / (hi - lo) * (self.y0 - self.y1)

    def _axes(self, xlabel, ylabel):
        p = self.parts
        p.append(f'<g class="axes" stroke="black" fill="none">'
                 f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}"/>'
                 f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}"/></g>')
        for t in _ticks(*self.xr):
            x = self.sx(t)
            p.append(f'<text x="{_num(x)}" y="{self.y0 + 16}" text-anchor="middle">{_fmt_tick(t)}</text>')
        for t in _ticks(*self.yr):
            y = self.sy(t)
            p.append(f'<text x="{self.x0 - 6}" y="{_num(y + 4)}" text-anchor="end">{_fmt_tick(t)}</text>')
        p.append(f'<text x="{(self.x0 + self.x1) / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
        cy = (self.y0 + self.y1) / 2
        p.append(f'<text x="16" y="{cy:.0f}" text-anchor="middle" transform="rotate(-90 16 {cy:.0f})">{escape(ylabel)}</text>')

    def legend(self, name, color):
        y = MARGIN["top"] + 14 * self.n_series
        x = WIDTH - MARGIN["right"] + 12
        self.parts.append(f'<rect x="{x}" y="{y}" width="10" height="10" fill="{color}"/>'
                          f'<text x="{x + 14}" y="{y + 9}">{escape(name)}</text>')
        self.n_series += 1

    def begin_series(self, name, color):
        self.parts.append(f'<g class="series" data-series={quoteattr(name)}>')
        self.legend(name, color)

    def end_series(self):
        self.parts.append('</g>')

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _fmt_tick(v):
    return f"{v:.3g}"


def line_plot(series: dict, title="", xlabel="", ylabel="", markers=True) -> str:
    """``series``: name -> list of (x, y)."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    c = _Canvas(title, xlabel, ylabel, _range(xs), _range(ys))
    for i, (name, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        c.begin_series(name, color)
        pts = sorted(pts)
        d = " ".join(f"{_num(c.sx(x))},{_num(c.sy(y))}" for x, y in pts)
        c.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{d}"/>')
        if markers:
            for x, y in pts:
                c.parts.append(f'<circle cx="{_num(c.sx(x))}" cy="{_num(c.sy(y))}" r="2.5" fill="{color}"/>')
        c.end_series()
    return c.svg()


def step_plot(series: dict, title="", xlabel="", ylabel="", vlines=()) -> str:
    """Right-continuous step functions; ``series``: name -> sorted (x, F(x)) knots."""
    xs = [x for pts in series.values() for x, _ in pts] + [v for v, _ in vlines]
    c = _Canvas(title, xlabel, ylabel, _range(xs), (0.0, 1.0))
    for i, (name, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        c.begin_series(name, color)
        coords = [(c.sx(c.xr[0]), c.sy(0.0))]
        prev = 0.0
        for x, f in pts:
            coords.append((c.sx(x), c.sy(prev)))
            coords.append((c.sx(x), c.sy(f)))
            prev = f
        coords.append((c.sx(c.xr[1]), c.sy(prev)))
        d = " ".join(f"{_num(a)},{_num(b)}" for a, b in coords)
        c.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{d}"/>')
        c.end_series()
    for v, label in vlines:
        x = _num(c.sx(v))
        c.parts.append(f'<g class="marker"><line x1="{x}" y1="{c.y0}" x2="{x}" y2="{c.y1}" '
                       f'stroke="gray" stroke-dasharray="4 3"/>'
                       f'<text x="{x}" y="{c.y1 - 4}" text-anchor="middle">{escape(label)}</text></g>')
    return c.svg()


def scatter_plot(series: dict, title="", xlabel="", ylabel="", equality_line=False) -> str:
    """``series``: name -> list of (x, y) or (x, y, point label)."""
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    if equality_line:
        lo, hi = _range(xs + ys)
        xr = yr = (lo, hi)
    else:
        xr, yr = _range(xs), _range(ys)
    c = _Canvas(title, xlabel, ylabel, xr, yr)
    if equality_line:
        c.parts.append(f'<line class="equality" x1="{_num(c.sx(xr[0]))}" y1="{_num(c.sy(xr[0]))}" '
                       f'x2="{_num(c.sx(xr[1]))}" y2="{_num(c.sy(xr[1]))}" stroke="gray" stroke-dasharray="5 4"/>')
    for i, (name, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        c.begin_series(name, color)
        for p in pts:
            tip = f"<title>{escape(str(p[2]))}</title>" if len(p) > 2 else ""
            c.parts.append(f'<circle cx="{_num(c.sx(p[0]))}" cy="{_num(c.sy(p[1]))}" r="4" '
                           f'fill="{color}" fill-opacity="0.8">{tip}</circle>')
        c.end_series()
    return c.svg()


def heatmap(labels, values, title="") -> str:
    """Square matrix; ``values[i][j]`` may be None (drawn hatched grey, labelled n/a)."""
    n = len(labels)
    cell = max(14, min(40, 420 // max(n, 1)))
    left, top = 150, 50
    w = left + cell * n + 20
    h = top + cell * n + 150
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
        f'font-family="sans-serif" font-size="10">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.0f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i, a in enumerate(labels):
        y = top + i * cell
        parts.append(f'<g class="series" data-series={quoteattr(a)}>')
        parts.append(f'<text x="{left - 4}" y="{y + cell / 2 + 3:.1f}" text-anchor="end">{escape(a)}</text>')
        for j, _ in enumerate(labels):
            v = values[i][j]
            x = left + j * cell
            if v is None or (isinstance(v, float) and math.isnan(v)):
                fill, text = "#dddddd", "n/a"
            else:
                fill, text = _diverging(v), f"{v:.2f}"
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>')
            if cell >= 24:
                parts.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 3:.1f}" text-anchor="middle" '
                             f'font-size="8">{text}</text>')
        parts.append('</g>')
    for j, b in enumerate(labels):
        x = left + j * cell + cell / 2
        y = top + n * cell + 6
        parts.append(f'<text x="{x:.1f}" y="{y}" text-anchor="end" transform="rotate(-60 {x:.1f} {y})">{escape(b)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _diverging(v: float) -> str:
    """Blue (-1) -> white (0) -> red (+1)."""
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, round(255 * (1 - v)), round(255 * (1 - v))
    else:
        r, g, b = round(255 * (1 + v)), round(255 * (1 + v)), 255
    return f"#{r:02x}{g:02x}{b:02x}"
