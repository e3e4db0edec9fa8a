"""Minimal self-contained SVG line plots for experiment CSVs.

No plotting dependency: the output is a single <svg> element with
polylines, tick labels, an optional legend, and dashed slope guides for
log-log panels.  Deliberately no timestamps or external references so a
rerun produces the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import BadCsv

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 30, 50  # plot margins
_PALETTE = ("#1f6fb2", "#d1495b", "#3a9b5c", "#8a5fbf", "#c98a1e",
            "#3aa0a0", "#777777", "#b05a7a", "#5c5cb0", "#7a8a2e")


@dataclass(frozen=True)
class PlotSpec:
    """What to draw from a CSV: x column, y columns, scales, guides."""

    x: str
    ys: tuple = ()
    group_by: str | None = None   # long-format input: one line per group value
    y: str | None = None          # y column when group_by is used
    logx: bool = False
    logy: bool = False
    guides: tuple = ()            # (slope, label) pairs, log-log only
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""


def read_csv(path: str):
    """Parse one of our CSVs: '#' comment lines, then a header row, then
    float rows.  Returns (columns, rows as list of float lists)."""
    columns = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if columns is None:
                columns = [c.strip() for c in line.split(",")]
                continue
            rows.append([float(v) for v in line.split(",")])
    if columns is None or not rows:
        raise BadCsv(f"{path}: no data rows")
    return columns, rows


def _col(columns, rows, name, path):
    try:
        k = columns.index(name)
    except ValueError:
        raise BadCsv(f"{path}: missing column {name!r}") from None
    return [r[k] for r in rows]


def _transform(vals, log, path, axis):
    if not log:
        return list(vals)
    out = []
    for v in vals:
        if v <= 0:
            raise BadCsv(f"{path}: {axis} value {v} not positive on log scale")
        out.append(math.log10(v))
    return out


def _ticks(lo, hi, log):
    if log:
        first, last = math.floor(lo), math.ceil(hi)
        if last - first > 8:
            step = math.ceil((last - first) / 8)
        else:
            step = 1
        return [(p, f"1e{p}") for p in range(first, last + 1, step)]
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * step:
        out.append((v, f"{v:g}"))
        v += step
    return out


def _fmt_pt(x, y):
    return f"{x:.2f},{y:.2f}"


def render_svg(csv_path: str, spec: PlotSpec, out_path: str) -> str:
    """Draw the spec'd panel from csv_path into out_path; returns out_path."""
    columns, rows = read_csv(csv_path)
    xs_raw = _col(columns, rows, spec.x, csv_path)

    series = []  # (label, xs, ys)
    if spec.group_by:
        if spec.y is None:
            raise BadCsv(f"{csv_path}: plot spec with group_by needs a y column")
        gv = _col(columns, rows, spec.group_by, csv_path)
        yv = _col(columns, rows, spec.y, csv_path)
        groups = sorted(set(gv))
        for g in groups:
            xs = [x for x, gg in zip(xs_raw, gv) if gg == g]
            ys = [y for y, gg in zip(yv, gv) if gg == g]
            series.append((f"{spec.group_by}={g:g}", xs, ys))
    else:
        for name in spec.ys:
            series.append((name, xs_raw, _col(columns, rows, name, csv_path)))
    if not series:
        raise BadCsv(f"{csv_path}: plot spec selects no series")

    tseries = []
    for label, xs, ys in series:
        tx = _transform(xs, spec.logx, csv_path, "x")
        ty = _transform(ys, spec.logy, csv_path, "y")
        keep = [(a, b) for a, b in zip(tx, ty) if math.isfinite(a) and math.isfinite(b)]
        if keep:
            tseries.append((label, [a for a, _ in keep], [b for _, b in keep]))
    if not tseries:
        raise BadCsv(f"{csv_path}: no finite points to draw")

    all_x = [v for _, xs, _ in tseries for v in xs]
    all_y = [v for _, _, ys in tseries for v in ys]
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = min(all_y), max(all_y)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    padx, pady = 0.04 * (x1 - x0), 0.06 * (y1 - y0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def sx(v):
        return _ML + (v - x0) / (x1 - x0) * (_W - _ML - _MR)

    def sy(v):
        return _H - _MB - (v - y0) / (y1 - y0) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
        f'height="{_H - _MT - _MB}" fill="none" stroke="#333"/>',
    ]
    if spec.title:
        parts.append(f'<text x="{_W / 2:.0f}" y="18" text-anchor="middle" '
                     f'font-size="13">{spec.title}</text>')

    for v, label in _ticks(x0, x1, spec.logx):
        if not x0 <= v <= x1:
            continue
        px = sx(v)
        parts.append(f'<line x1="{px:.2f}" y1="{_H - _MB}" x2="{px:.2f}" '
                     f'y2="{_H - _MB + 4}" stroke="#333"/>')
        parts.append(f'<text x="{px:.2f}" y="{_H - _MB + 16}" '
                     f'text-anchor="middle">{label}</text>')
    for v, label in _ticks(y0, y1, spec.logy):
        if not y0 <= v <= y1:
            continue
        py = sy(v)
        parts.append(f'<line x1="{_ML - 4}" y1="{py:.2f}" x2="{_ML}" '
                     f'y2="{py:.2f}" stroke="#333"/>')
        parts.append(f'<text x="{_ML - 7}" y="{py + 3:.2f}" '
                     f'text-anchor="end">{label}</text>')
    if spec.xlabel:
        parts.append(f'<text x="{(_ML + _W - _MR) / 2:.0f}" y="{_H - 12}" '
                     f'text-anchor="middle">{spec.xlabel}</text>')
    if spec.ylabel:
        cy = (_MT + _H - _MB) / 2
        parts.append(f'<text x="16" y="{cy:.0f}" text-anchor="middle" '
                     f'transform="rotate(-90 16 {cy:.0f})">{spec.ylabel}</text>')

    # Slope guides anchor at the first series' first point, shifted down a bit.
    if spec.guides and spec.logx and spec.logy:
        _, gx, gy = tseries[0]
        ax, ay = gx[0], gy[0] - 0.15
        for gi, (slope, label) in enumerate(spec.guides):
            bx = x1 - padx
            by = ay + slope * (bx - ax)
            parts.append(
                f'<line x1="{sx(ax):.2f}" y1="{sy(ay):.2f}" x2="{sx(bx):.2f}" '
                f'y2="{sy(by):.2f}" stroke="#999" stroke-dasharray="5,4"/>')
            parts.append(f'<text x="{sx(bx) - 4:.2f}" y="{sy(by) - 5:.2f}" '
                         f'text-anchor="end" fill="#777">{label}</text>')

    show_legend = len(tseries) > 1 and len(tseries) <= 10
    for si, (label, xs, ys) in enumerate(tseries):
        color = _PALETTE[si % len(_PALETTE)]
        pts = " ".join(_fmt_pt(sx(a), sy(b)) for a, b in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        if show_legend:
            ly = _MT + 14 + 14 * si
            parts.append(f'<line x1="{_W - _MR - 130}" y1="{ly}" '
                         f'x2="{_W - _MR - 110}" y2="{ly}" stroke="{color}" '
                         f'stroke-width="1.5"/>')
            parts.append(f'<text x="{_W - _MR - 105}" y="{ly + 3}">{label}</text>')

    parts.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return out_path
