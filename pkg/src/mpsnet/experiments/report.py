"""CSV and dependency-free SVG output.

SVG output is byte-deterministic: coordinates are printed with fixed
precision and nothing time- or environment-dependent is embedded.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 55


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def emit_csv(rows, path, columns=None):
    """Write dict rows with a header; RFC 4180 quoting and CRLF line ends."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c, "")) for c in columns])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _escape(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _header(title, xlabel, ylabel):
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{_escape(title)}</text>',
        f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{_escape(xlabel)}</text>',
        f'<text x="16" y="{(TOP + HEIGHT - BOTTOM) / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 16 {(TOP + HEIGHT - BOTTOM) / 2:.1f})">{_escape(ylabel)}</text>',
    ]


def _axes(x0, x1, y0, y1, ylog=False):
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    out = [f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="#000"/>',
           f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="#000"/>']
    for k in range(5):
        fx = k / 4
        xv = x0 + fx * (x1 - x0)
        px = LEFT + fx * pw
        out.append(f'<line x1="{px:.2f}" y1="{TOP + ph}" x2="{px:.2f}" y2="{TOP + ph + 4}" stroke="#000"/>')
        out.append(f'<text x="{px:.2f}" y="{TOP + ph + 17}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{xv:.3g}</text>')
        yv = y0 + fx * (y1 - y0)
        label = f"{10 ** yv:.2g}" if ylog else f"{yv:.3g}"
        py = TOP + ph - fx * ph
        out.append(f'<line x1="{LEFT - 4}" y1="{py:.2f}" x2="{LEFT}" y2="{py:.2f}" stroke="#000"/>')
        out.append(f'<text x="{LEFT - 6}" y="{py + 3:.2f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{label}</text>')
    return out


def emit_svg_histogram(histogram, path, title="", xlabel="singular value", ylabel="count"):
    """Bar chart of ``(lower, upper, count)`` bins, one rectangle per bin."""
    histogram = list(histogram)
    if not histogram:
        raise ValueError("histogram has no bins")
    x0, x1 = histogram[0][0], histogram[-1][1]
    if x1 <= x0:
        x1 = x0 + 1.0
    ymax = max(c for _, _, c in histogram) or 1
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    lines = _header(title, xlabel, ylabel) + _axes(x0, x1, 0, ymax)
    for lo, hi, count in histogram:
        px = LEFT + (lo - x0) / (x1 - x0) * pw
        w = (hi - lo) / (x1 - x0) * pw
        h = count / ymax * ph
        lines.append(f'<rect x="{px:.2f}" y="{TOP + ph - h:.2f}" width="{w:.2f}" height="{h:.2f}" '
                     f'fill="{COLORS[0]}" stroke="#ffffff" stroke-width="0.5"/>')
    lines.append("</svg>")
    return _write(path, lines)


def emit_svg_lines(series, path, title="", xlabel="step", ylabel="loss", ylog=False):
    """Polylines for ``{name: (xs, ys)}``, with a legend in insertion order."""
    series = {k: (list(map(float, xs)), list(map(float, ys))) for k, (xs, ys) in series.items()}
    if ylog:
        series = {k: (xs, [math.log10(max(y, 1e-300)) for y in ys]) for k, (xs, ys) in series.items()}
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        raise ValueError("no points to plot")
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(ys_all), max(ys_all)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    lines = _header(title, xlabel, ylabel) + _axes(x0, x1, y0, y1, ylog)
    for k, (name, (xs, ys)) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{LEFT + (x - x0) / (x1 - x0) * pw:.2f},{TOP + ph - (y - y0) / (y1 - y0) * ph:.2f}"
                       for x, y in zip(xs, ys))
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = TOP + 14 + 16 * k
        lines.append(f'<line x1="{WIDTH - RIGHT - 110}" y1="{ly}" x2="{WIDTH - RIGHT - 90}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        lines.append(f'<text x="{WIDTH - RIGHT - 85}" y="{ly + 4}" font-family="sans-serif" '
                     f'font-size="11">{_escape(name)}</text>')
    lines.append("</svg>")
    return _write(path, lines)


def _write(path, lines):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return path
