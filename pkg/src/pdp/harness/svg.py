"""Minimal deterministic SVG plots (line series and scatters).

Hand-rolled so report bytes depend only on the data: no timestamps, no
library version strings.
"""

from __future__ import annotations

import numpy as np

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 20, 36, 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.4f}".rstrip("0").rstrip(".")


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [(out_lo + (v - lo) / span * (out_hi - out_lo)) for v in vals]


def _axes(title: str, xlabel: str, ylabel: str, xlo, xhi, ylo, yhi) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{_H / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_H / 2})">{ylabel}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" fill="none" stroke="#888"/>',
    ]
    for i in range(5):
        fx = xlo + (xhi - xlo) * i / 4
        fy = ylo + (yhi - ylo) * i / 4
        px = _ML + (_W - _ML - _MR) * i / 4
        py = _H - _MB - (_H - _MT - _MB) * i / 4
        parts.append(f'<text x="{_fmt(px)}" y="{_H - _MB + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{_fmt(fx)}</text>')
        parts.append(f'<text x="{_ML - 6}" y="{_fmt(py + 3)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{_fmt(fy)}</text>')
    return parts


def _bounds(arrays):
    flat = np.concatenate([np.asarray(a, dtype=float).reshape(-1) for a in arrays if len(a)])
    lo, hi = float(flat.min()), float(flat.max())
    if lo == hi:
        lo -= 0.5
        hi += 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_plot(path, series: dict[str, tuple], title: str, xlabel: str, ylabel: str) -> None:
    """series: name -> (xs, ys)."""
    xlo, xhi = _bounds([s[0] for s in series.values()])
    ylo, yhi = _bounds([s[1] for s in series.values()])
    parts = _axes(title, xlabel, ylabel, xlo, xhi, ylo, yhi)
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        px = _scale(xs, xlo, xhi, _ML, _W - _MR)
        py = _scale(ys, ylo, yhi, _H - _MB, _MT)
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(px, py):
            parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="3" fill="{color}"/>')
        parts.append(f'<text x="{_W - _MR - 6}" y="{_MT + 16 + 14 * i}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def scatter_plot(path, groups: dict[str, np.ndarray], title: str, xlabel: str, ylabel: str,
                 markers: dict[str, str] | None = None) -> None:
    """groups: name -> (N, 2) points; marker 'x' draws crosses (ground truth)."""
    nonempty = [g for g in groups.values() if len(g)]
    if not nonempty:
        nonempty = [np.zeros((1, 2))]
    xlo, xhi = _bounds([g[:, 0] for g in nonempty])
    ylo, yhi = _bounds([g[:, 1] for g in nonempty])
    parts = _axes(title, xlabel, ylabel, xlo, xhi, ylo, yhi)
    for i, (name, pts) in enumerate(groups.items()):
        color = _COLORS[i % len(_COLORS)]
        mark = (markers or {}).get(name, "o")
        if len(pts):
            px = _scale(pts[:, 0], xlo, xhi, _ML, _W - _MR)
            py = _scale(pts[:, 1], ylo, yhi, _H - _MB, _MT)
            for x, y in zip(px, py):
                if mark == "x":
                    parts.append(f'<path d="M {_fmt(x - 3)} {_fmt(y - 3)} L {_fmt(x + 3)} {_fmt(y + 3)} '
                                 f'M {_fmt(x - 3)} {_fmt(y + 3)} L {_fmt(x + 3)} {_fmt(y - 3)}" '
                                 f'stroke="{color}" stroke-width="1.5"/>')
                else:
                    parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="2.5" fill="{color}" fill-opacity="0.6"/>')
        parts.append(f'<text x="{_W - _MR - 6}" y="{_MT + 16 + 14 * i}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
