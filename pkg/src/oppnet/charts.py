"""Dependency-free static SVG charts.

Charts are rendered purely from CSV files already on disk, never from
in-memory state, so re-plotting a results directory always reproduces the
figures byte for byte.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

PALETTE = ("#1f6fb4", "#d1495b", "#2e8b57", "#ad7a00", "#6a4c93", "#3c3c3c")

_WIDTH, _HEIGHT = 640, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 34, 46


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return [0.0]
    if hi == lo:
        pad = abs(lo) if lo != 0 else 1.0
        lo, hi = lo - pad / 2, hi + pad / 2
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def line_chart(series: list[tuple[str, list[float], list[float]]], path: str | Path,
               title: str = "", xlabel: str = "", ylabel: str = "") -> None:
    """Render labelled polylines with linear axes to an SVG file."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys if math.isfinite(y)]
    if not xs_all or not ys_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + (abs(y_lo) if y_lo != 0 else 1.0)

    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def sx(x: float) -> float:
        return _MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return _MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for tick in _ticks(x_lo, x_hi):
        px = sx(tick)
        out.append(f'<line x1="{px:.2f}" y1="{_MARGIN_T}" x2="{px:.2f}" '
                   f'y2="{_MARGIN_T + plot_h}" stroke="#dddddd"/>')
        out.append(f'<text x="{px:.2f}" y="{_MARGIN_T + plot_h + 16}" '
                   f'text-anchor="middle">{_fmt(tick)}</text>')
    for tick in _ticks(y_lo, y_hi):
        py = sy(tick)
        out.append(f'<line x1="{_MARGIN_L}" y1="{py:.2f}" x2="{_MARGIN_L + plot_w}" '
                   f'y2="{py:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{_MARGIN_L - 6}" y="{py + 4:.2f}" '
                   f'text-anchor="end">{_fmt(tick)}</text>')
    out.append(f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
               'fill="none" stroke="#333333"/>')
    out.append(f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{_HEIGHT - 10}" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{_MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.1f})">{ylabel}</text>')

    for idx, (label, xs, ys) in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        points = " ".join(
            f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                   'stroke-width="1.6"/>')
        ly = _MARGIN_T + 14 + 16 * idx
        out.append(f'<line x1="{_MARGIN_L + plot_w - 130}" y1="{ly - 4}" '
                   f'x2="{_MARGIN_L + plot_w - 110}" y2="{ly - 4}" stroke="{color}" '
                   'stroke-width="2"/>')
        out.append(f'<text x="{_MARGIN_L + plot_w - 104}" y="{ly}">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def node_map(positions: list[tuple[float, float]], intensity: list[float],
             edges: list[tuple[int, int]], path: str | Path, title: str = "",
             highlight: int | None = None) -> None:
    """Node-intensity rendering: circles shaded by a normalized per-node value,
    with the graph's links drawn underneath; optionally ring one node."""
    xs = [p[0] for p in positions]
    ys = [p[1] for p in positions]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    span_x = (x_hi - x_lo) or 1.0
    span_y = (y_hi - y_lo) or 1.0
    side = 480
    pad = 40

    def sx(x: float) -> float:
        return pad + (x - x_lo) / span_x * side

    def sy(y: float) -> float:
        return pad + 24 + side - (y - y_lo) / span_y * side

    top = max(intensity) if intensity and max(intensity) > 0 else 1.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{side + 2 * pad}" '
        f'height="{side + 2 * pad + 24}" font-family="sans-serif" font-size="12">',
        f'<rect width="{side + 2 * pad}" height="{side + 2 * pad + 24}" fill="white"/>',
        f'<text x="{(side + 2 * pad) / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
    ]
    seen = set()
    for i, j in edges:
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        out.append(f'<line x1="{sx(positions[i][0]):.2f}" y1="{sy(positions[i][1]):.2f}" '
                   f'x2="{sx(positions[j][0]):.2f}" y2="{sy(positions[j][1]):.2f}" '
                   'stroke="#cccccc"/>')
    for idx, (pos, value) in enumerate(zip(positions, intensity)):
        level = value / top
        shade = int(235 - 205 * level)
        radius = 6 + 8 * level
        out.append(f'<circle cx="{sx(pos[0]):.2f}" cy="{sy(pos[1]):.2f}" r="{radius:.2f}" '
                   f'fill="rgb(255,{shade},{max(shade - 40, 0)})" stroke="#663300"/>')
        if idx == highlight:
            out.append(f'<circle cx="{sx(pos[0]):.2f}" cy="{sy(pos[1]):.2f}" '
                       f'r="{radius + 4:.2f}" fill="none" stroke="#1f6fb4" '
                       'stroke-width="2"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def read_csv_columns(path: str | Path) -> dict[str, list[str]]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        columns: dict[str, list[str]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for name, value in row.items():
                columns[name].append(value)
    return columns


def chart_from_csv(csv_path: str | Path, x_col: str, y_cols: list[str],
                   out_path: str | Path, title: str = "") -> None:
    """Line chart built from named CSV columns."""
    columns = read_csv_columns(csv_path)
    xs = [float(v) for v in columns[x_col]]
    series = [(col, xs, [float(v) for v in columns[col]]) for col in y_cols]
    line_chart(series, out_path, title=title or Path(csv_path).stem,
               xlabel=x_col, ylabel=", ".join(y_cols))
