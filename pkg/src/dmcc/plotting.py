"""Dependency-free SVG charts for the CSV files written by the harness."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
WIDTH, HEIGHT = 760, 480
LEFT, RIGHT, TOP, BOTTOM = 70, 190, 30, 60


class PlotSchemaError(ValueError):
    pass


def _nice_ticks(lo, hi, count=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    if ticks[-1] < hi:
        ticks.append(round(t, 10))
    return ticks


class _Canvas:
    def __init__(self, x_range, y_range, title, xlabel, ylabel):
        self.x0, self.x1 = x_range
        self.yt = _nice_ticks(*y_range)
        self.y0, self.y1 = self.yt[0], self.yt[-1]
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="18" y="{(TOP + HEIGHT - BOTTOM) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {(TOP + HEIGHT - BOTTOM) / 2:.1f})">{escape(ylabel)}</text>',
            f'<rect x="{LEFT}" y="{TOP}" width="{WIDTH - LEFT - RIGHT}" height="{HEIGHT - TOP - BOTTOM}" '
            'fill="none" stroke="black"/>',
        ]
        for t in self.yt:
            y = self.py(t)
            self.parts.append(f'<line x1="{LEFT - 4}" y1="{y:.2f}" x2="{LEFT}" y2="{y:.2f}" stroke="black"/>')
            self.parts.append(f'<text x="{LEFT - 7}" y="{y + 4:.2f}" text-anchor="end">{t:g}</text>')
        self.legend = []

    def px(self, x):
        span = (self.x1 - self.x0) or 1.0
        return LEFT + (x - self.x0) / span * (WIDTH - LEFT - RIGHT)

    def py(self, y):
        span = (self.y1 - self.y0) or 1.0
        return HEIGHT - BOTTOM - (y - self.y0) / span * (HEIGHT - TOP - BOTTOM)

    def x_ticks(self, ticks, labels=None, cls="tick"):
        for i, t in enumerate(ticks):
            x = self.px(t)
            label = labels[i] if labels else f"{t:g}"
            self.parts.append(f'<line x1="{x:.2f}" y1="{HEIGHT - BOTTOM}" x2="{x:.2f}" y2="{HEIGHT - BOTTOM + 4}" stroke="black"/>')
            self.parts.append(f'<text class="{cls}" x="{x:.2f}" y="{HEIGHT - BOTTOM + 17}" text-anchor="middle">{escape(label)}</text>')

    def add_legend(self, name, color, marker=False):
        i = len(self.legend)
        x, y = WIDTH - RIGHT + 15, TOP + 12 + 18 * i
        if marker:
            sym = f'<circle cx="{x + 10}" cy="{y - 4}" r="4" fill="{color}"/>'
        else:
            sym = f'<line x1="{x}" y1="{y - 4}" x2="{x + 20}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>'
        self.legend.append(sym + f'<text class="legend" x="{x + 26}" y="{y}">{escape(name)}</text>')

    def render(self):
        return "\n".join(self.parts + ['<g class="legend-box">'] + self.legend + ["</g>", "</svg>"]) + "\n"


def _read(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise PlotSchemaError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise PlotSchemaError(f"{path}: no data rows (columns: {', '.join(header)})")
    return header, body


def _floats(body, idx, path, header):
    try:
        return [float(r[idx]) for r in body]
    except (ValueError, IndexError):
        raise PlotSchemaError(f"{path}: non-numeric or missing values in column {header[idx]!r}") from None


def _series_names(header, path):
    cols = header[1:]
    if not cols or not all(c.endswith("_msd_db") for c in cols):
        raise PlotSchemaError(f"{path}: expected columns '{header[0]},<name>_msd_db,...', got {', '.join(header)}")
    return [c[: -len("_msd_db")] for c in cols]


def _curves(path, header, body):
    names = _series_names(header, path)
    xs = _floats(body, 0, path, header)
    series = [_floats(body, j, path, header) for j in range(1, len(header))]
    lo = min(min(s) for s in series)
    hi = max(max(s) for s in series)
    cv = _Canvas((min(xs), max(xs)), (lo, hi), Path(path).stem, "iteration", "MSD (dB)")
    cv.x_ticks([t for t in _nice_ticks(min(xs), max(xs)) if min(xs) <= t <= max(xs)])
    for j, (name, ys) in enumerate(zip(names, series)):
        color = PALETTE[j % len(PALETTE)]
        pts = " ".join(f"{cv.px(x):.2f},{cv.py(y):.2f}" for x, y in zip(xs, ys))
        cv.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        cv.add_legend(name, color)
    return cv.render()


def _steady(path, header, body):
    names = _series_names(header, path)
    nodes = [r[0] for r in body]
    series = [_floats(body, j, path, header) for j in range(1, len(header))]
    lo = min(min(s) for s in series)
    hi = max(max(s) for s in series)
    cv = _Canvas((-0.5, len(nodes) - 0.5), (lo, hi), Path(path).stem, "node", "steady-state MSD (dB)")
    cv.x_ticks(list(range(len(nodes))), nodes, cls="category")
    width = 0.6
    for j, (name, ys) in enumerate(zip(names, series)):
        color = PALETTE[j % len(PALETTE)]
        off = (j + 0.5) / len(names) * width - width / 2
        for k, y in enumerate(ys):
            cv.parts.append(f'<circle cx="{cv.px(k + off):.2f}" cy="{cv.py(y):.2f}" r="3.5" fill="{color}"/>')
        cv.add_legend(name, color, marker=True)
    return cv.render()


def _sweep(path, header, body):
    keys = header[:-2]
    if not keys:
        # single-point sweep: plot algorithms as categories
        algos = [r[0] for r in body]
        ys = _floats(body, 1, path, header)
        cv = _Canvas((-0.5, len(algos) - 0.5), (min(ys), max(ys)), Path(path).stem, "algorithm", "steady-state MSD (dB)")
        cv.x_ticks(list(range(len(algos))), algos, cls="category")
        for k, y in enumerate(ys):
            cv.parts.append(f'<circle cx="{cv.px(k):.2f}" cy="{cv.py(y):.2f}" r="4" fill="{PALETTE[0]}"/>')
        return cv.render()
    xs = _floats(body, 0, path, header)
    ys = _floats(body, len(header) - 1, path, header)
    groups: dict[str, list[tuple[float, float]]] = {}
    for r, x, y in zip(body, xs, ys):
        label = r[-2] + "".join(f" {k}={v}" for k, v in zip(keys[1:], r[1:len(keys)]))
        groups.setdefault(label, []).append((x, y))
    cv = _Canvas((min(xs), max(xs)) if max(xs) > min(xs) else (min(xs) - 1, max(xs) + 1),
                 (min(ys), max(ys)), Path(path).stem, keys[0], "steady-state MSD (dB)")
    cv.x_ticks(sorted(set(xs)))
    for j, (label, pts) in enumerate(groups.items()):
        color = PALETTE[j % len(PALETTE)]
        pts = sorted(pts)
        cv.parts.append('<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>'.format(
            color, " ".join(f"{cv.px(x):.2f},{cv.py(y):.2f}" for x, y in pts)))
        for x, y in pts:
            cv.parts.append(f'<circle cx="{cv.px(x):.2f}" cy="{cv.py(y):.2f}" r="3" fill="{color}"/>')
        cv.add_legend(label, color)
    return cv.render()


def emit_plot(csv_path, svg_path=None) -> Path:
    """Render ``csv_path`` (curves, steady-state or sweep schema) to SVG.

    Nothing is written when the CSV is empty or does not match a schema.
    """
    csv_path = Path(csv_path)
    svg_path = Path(svg_path) if svg_path else csv_path.with_suffix(".svg")
    header, body = _read(csv_path)
    if header[0] == "iteration":
        svg = _curves(csv_path, header, body)
    elif header[0] == "node":
        svg = _steady(csv_path, header, body)
    elif len(header) >= 2 and header[-2:] == ["algo", "msd_db"]:
        svg = _sweep(csv_path, header, body)
    else:
        raise PlotSchemaError(f"{csv_path}: unrecognised columns {', '.join(header)}")
    svg_path.write_text(svg)
    return svg_path


def emit_topology_plot(topology, svg_path) -> Path:
    """Node positions and links on the square deployment region."""
    side = min(WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM)
    scale = side / topology.region

    def pt(p):
        return LEFT + p[0] * scale, HEIGHT - BOTTOM - p[1] * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
             f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
             f'<rect x="{LEFT}" y="{HEIGHT - BOTTOM - side:.2f}" width="{side:.2f}" height="{side:.2f}" fill="none" stroke="black"/>']
    for l, k in topology.edges():
        (x1, y1), (x2, y2) = pt(topology.positions[l]), pt(topology.positions[k])
        parts.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="#888"/>')
    for k, p in enumerate(topology.positions):
        x, y = pt(p)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="6" fill="{PALETTE[0]}"/>')
        parts.append(f'<text x="{x + 8:.2f}" y="{y - 6:.2f}">{k}</text>')
    parts.append("</svg>")
    svg_path = Path(svg_path)
    svg_path.write_text("\n".join(parts) + "\n")
    return svg_path
