"""Deterministic text output: CSV, JSON, small SVG plots and gnuplot scripts."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "{:.17g}"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT.format(float(x))
    return str(x)


def write_csv(path, header, rows) -> Path:
    """Rows of numbers/strings; complex entries must be split by the caller."""
    path = Path(path)
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    header = lines[0].split(",")
    return header, [l.split(",") for l in lines[1:]]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=1, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- SVG ------------------------------------------------------------------------

_W, _H, _PAD = 640, 420, 60
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(v, lo, hi, a, b, log):
    if log:
        v, lo, hi = np.log10(v), np.log10(lo), np.log10(hi)
    if hi == lo:
        return (a + b) / 2
    return a + (v - lo) * (b - a) / (hi - lo)


def svg_lines(path, series: dict, xlabel: str = "", ylabel: str = "", title: str = "",
              logx: bool = False, logy: bool = False, markers: bool = True) -> Path:
    """Line plot of ``{label: (x, y)}``; non-positive values are dropped on log axes."""
    clean = {}
    for label, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        clean[label] = (x[ok], y[ok])
    xs = np.concatenate([c[0] for c in clean.values()] or [np.zeros(1)])
    ys = np.concatenate([c[1] for c in clean.values()] or [np.zeros(1)])
    if xs.size == 0:
        xs = ys = np.ones(1)
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="15">{title}</text>',
             f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - 20}" y2="{_H - _PAD}" stroke="black"/>',
             f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_PAD}" y2="30" stroke="black"/>',
             f'<text x="{_W / 2}" y="{_H - 15}" text-anchor="middle" font-size="13">{xlabel}</text>',
             f'<text x="16" y="{_H / 2}" text-anchor="middle" font-size="13" '
             f'transform="rotate(-90 16 {_H / 2})">{ylabel}</text>']
    for val, anchor in ((x0, _PAD), (x1, _W - 20)):
        parts.append(f'<text x="{anchor:.1f}" y="{_H - _PAD + 16}" text-anchor="middle" '
                     f'font-size="11">{val:.3g}</text>')
    for val, anchor in ((y0, _H - _PAD), (y1, 30)):
        parts.append(f'<text x="{_PAD - 4}" y="{anchor:.1f}" text-anchor="end" '
                     f'font-size="11">{val:.3g}</text>')
    for k, (label, (x, y)) in enumerate(clean.items()):
        color = _COLORS[k % len(_COLORS)]
        px = [_scale(v, x0, x1, _PAD, _W - 20, logx) for v in x]
        py = [_scale(v, y0, y1, _H - _PAD, 30, logy) for v in y]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}"/>')
        if markers:
            parts += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>'
                      for a, b in zip(px, py)]
        parts.append(f'<text x="{_W - 30}" y="{48 + 16 * k}" text-anchor="end" '
                     f'font-size="12" fill="{color}">{label}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path


def svg_field(path, grid, values, title: str = "") -> Path:
    """Heat map of an interior grid function (blue negative, red positive)."""
    F = grid.as_field(np.asarray(values, float))
    vmax = float(np.max(np.abs(F))) or 1.0
    size = 400
    cw, ch = size / grid.nx, size / grid.ny
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 40}" height="{size + 60}">',
             f'<rect width="{size + 40}" height="{size + 60}" fill="white"/>',
             f'<text x="{(size + 40) / 2}" y="22" text-anchor="middle" font-size="15">'
             f'{title} (max |v| = {vmax:.3g})</text>']
    for j in range(grid.ny):
        for i in range(grid.nx):
            t = F[j, i] / vmax
            r, g, b = (255, int(255 * (1 - t)), int(255 * (1 - t))) if t >= 0 else \
                (int(255 * (1 + t)), int(255 * (1 + t)), 255)
            parts.append(f'<rect x="{20 + i * cw:.2f}" y="{40 + (grid.ny - 1 - j) * ch:.2f}" '
                         f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" '
                         f'fill="rgb({r},{g},{b})"/>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path


def gnuplot_script(path, csv_name: str, xcol: int, ycols: dict, xlabel: str = "",
                   ylabel: str = "", logx: bool = False, logy: bool = False) -> Path:
    """Script regenerating a line plot from its CSV (columns are 1-based)."""
    svg = Path(path).with_suffix(".svg").name
    lines = ["set datafile separator ','", "set terminal svg size 640,420",
             f"set output '{svg}'", f"set xlabel '{xlabel}'", f"set ylabel '{ylabel}'",
             "set key top right"]
    if logx:
        lines.append("set logscale x")
    if logy:
        lines.append("set logscale y")
    plots = [f"'{csv_name}' every ::1 using {xcol}:{c} with linespoints title '{t}'"
             for t, c in ycols.items()]
    lines.append("plot " + ", \\\n     ".join(plots))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def gnuplot_field_script(path, csv_name: str, title: str = "") -> Path:
    """Script regenerating a heat map from an ``x,y,value`` CSV."""
    svg = Path(path).with_suffix(".svg").name
    lines = ["set datafile separator ','", "set terminal svg size 520,460",
             f"set output '{svg}'", f"set title '{title}'", "set view map",
             "set palette defined (-1 'blue', 0 'white', 1 'red')",
             f"plot '{csv_name}' every ::1 using 1:2:3 with image notitle"]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
