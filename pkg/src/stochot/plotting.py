"""Deterministic SVG emission: log-log risk curves and the checkerboard figure.

Hand-rolled SVG keeps the output free of timestamps and generator noise:
the same rows always produce byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .kernels import DiscreteKernelStage, RoundToPartition, pushforward
from .measures import DiscreteMeasure

__all__ = ["emit_svg_plot", "emit_checkerboard_svg"]

_PALETTE = (
    "#4477aa",
    "#ee6677",
    "#228833",
    "#ccbb44",
    "#66ccee",
    "#aa3377",
    "#bbbbbb",
)
_DASHES = ("none", "6,3", "2,2", "8,2,2,2")

_W, _H = 720, 480
_ML, _MR, _MT, _MB = 70, 160, 30, 50


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _log_ticks(lo: float, hi: float) -> list[float]:
    ticks = []
    e = math.floor(math.log10(lo))
    while 10.0**e <= hi * 1.0001:
        for m in (1, 2, 5):
            v = m * 10.0**e
            if lo * 0.9999 <= v <= hi * 1.0001:
                ticks.append(v)
        e += 1
    return ticks or [lo, hi]


def emit_svg_plot(
    summary_rows: list[dict],
    path,
    metric: str = "ep",
    title: str | None = None,
) -> None:
    """Log-log mean curves with shaded bootstrap bands.

    One polyline per (estimator, d); bands use the quantile columns
    produced by ``experiments.summarize``.
    """
    if not summary_rows:
        raise ValueError("nothing to plot")
    series: dict[tuple, list[dict]] = {}
    for row in summary_rows:
        series.setdefault((row["estimator"], row["d"]), []).append(row)
    for key in series:
        series[key].sort(key=lambda r: r["n"])

    qkeys = sorted(k for k in summary_rows[0] if k.startswith("q"))
    xs = [r["n"] for r in summary_rows]
    ys = [r["mean"] for r in summary_rows]
    for k in qkeys:
        ys.extend(r[k] for r in summary_rows)
    ys = [y for y in ys if y > 0]
    if not ys:
        raise ValueError("all values are nonpositive; nothing to plot on log axes")
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo / 1.5, x_hi * 1.5
    if y_lo == y_hi:
        y_lo, y_hi = y_lo / 1.5, y_hi * 1.5

    def sx(v: float) -> float:
        return _ML + (math.log(v) - math.log(x_lo)) / (math.log(x_hi) - math.log(x_lo)) * (
            _W - _ML - _MR
        )

    def sy(v: float) -> float:
        v = max(v, y_lo * 1e-6)
        return _H - _MB - (math.log(v) - math.log(y_lo)) / (math.log(y_hi) - math.log(y_lo)) * (
            _H - _MT - _MB
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
        'fill="none" stroke="#444444" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_ML}" y="20" font-family="sans-serif" font-size="14">{title}</text>'
        )
    for v in _log_ticks(x_lo, x_hi):
        x = sx(v)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{_H - _MB}" x2="{_fmt(x)}" y2="{_H - _MB + 5}" stroke="#444444"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{_H - _MB + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{v:g}</text>'
        )
    for v in _log_ticks(y_lo, y_hi):
        y = sy(v)
        parts.append(
            f'<line x1="{_ML - 5}" y1="{_fmt(y)}" x2="{_ML}" y2="{_fmt(y)}" stroke="#444444"/>'
        )
        parts.append(
            f'<text x="{_ML - 8}" y="{_fmt(y)}" text-anchor="end" dominant-baseline="middle" '
            f'font-family="sans-serif" font-size="10">{v:g}</text>'
        )
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:.0f}" y="{_H - 10}" text-anchor="middle" '
        'font-family="sans-serif" font-size="12">n</text>'
    )
    parts.append(
        f'<text x="18" y="{(_MT + _H - _MB) / 2:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" transform="rotate(-90 18 {(_MT + _H - _MB) / 2:.0f})">{metric}</text>'
    )

    estimators = sorted({e for e, _ in series})
    dims = sorted({d for _, d in series})
    for (est, d), rows in sorted(series.items()):
        color = _PALETTE[estimators.index(est) % len(_PALETTE)]
        dash = _DASHES[dims.index(d) % len(_DASHES)]
        if len(qkeys) >= 2:
            lo_key, hi_key = qkeys[0], qkeys[-1]
            upper = [(sx(r["n"]), sy(r[hi_key])) for r in rows]
            lower = [(sx(r["n"]), sy(r[lo_key])) for r in reversed(rows)]
            pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in upper + lower)
            parts.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        pts = " ".join(f"{_fmt(sx(r['n']))},{_fmt(sy(r['mean']))}" for r in rows)
        dash_attr = "" if dash == "none" else f' stroke-dasharray="{dash}"'
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"{dash_attr}/>'
        )
        for r in rows:
            parts.append(
                f'<circle cx="{_fmt(sx(r["n"]))}" cy="{_fmt(sy(r["mean"]))}" r="2.5" fill="{color}"/>'
            )
    # legend
    y = _MT + 10
    for (est, d), _rows in sorted(series.items()):
        color = _PALETTE[estimators.index(est) % len(_PALETTE)]
        dash = _DASHES[dims.index(d) % len(_DASHES)]
        dash_attr = "" if dash == "none" else f' stroke-dasharray="{dash}"'
        parts.append(
            f'<line x1="{_W - _MR + 10}" y1="{y}" x2="{_W - _MR + 40}" y2="{y}" '
            f'stroke="{color}" stroke-width="1.8"{dash_attr}/>'
        )
        parts.append(
            f'<text x="{_W - _MR + 46}" y="{y + 4}" font-family="sans-serif" font-size="11">'
            f"{est} d={d}</text>"
        )
        y += 18
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def emit_checkerboard_svg(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    pipeline,
    path,
    size: int = 560,
) -> None:
    """Four-layer picture of a rounding pipeline on a planar instance:
    source sample, rounded source, coupling segments, and the pipeline's
    pushforward of the full source (its destination measure)."""
    if mu.dim != 2:
        raise ValueError("checkerboard figure is two-dimensional")
    margin = 20
    span = size - 2 * margin

    all_pts = np.vstack([mu.points, nu.points])
    lo = all_pts.min(axis=0)
    hi = all_pts.max(axis=0)
    scale = span / max(float((hi - lo).max()), 1e-9)

    def sxy(pt) -> tuple[str, str]:
        x = margin + (pt[0] - lo[0]) * scale
        y = size - margin - (pt[1] - lo[1]) * scale
        return _fmt(x), _fmt(y)

    round_stage = next((s for s in pipeline.stages if isinstance(s, RoundToPartition)), None)
    kernel_stage = next((s for s in pipeline.stages if isinstance(s, DiscreteKernelStage)), None)
    if round_stage is None or kernel_stage is None:
        raise ValueError("expected a rounding pipeline (round stage + discrete kernel)")

    dest = pushforward(pipeline, mu)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        '<g id="source" fill="#ee7733" fill-opacity="0.6">',
    ]
    for pt in mu.points:
        x, y = sxy(pt)
        parts.append(f'<circle cx="{x}" cy="{y}" r="2"/>')
    parts.append("</g>")

    rounded = round_stage.apply(mu.points)
    centers = np.unique(rounded, axis=0)
    parts.append('<g id="rounded-source" fill="none" stroke="#cc3311" stroke-width="1.2">')
    for pt in centers:
        x, y = sxy(pt)
        parts.append(f'<rect x="{_fmt(float(x) - 3)}" y="{_fmt(float(y) - 3)}" width="6" height="6"/>')
    parts.append("</g>")

    k = kernel_stage.kernel
    parts.append('<g id="plan" stroke="#66ccee" stroke-width="0.8" stroke-opacity="0.7">')
    csr = k.rows
    for i in range(k.n_source):
        x1, y1 = sxy(k.source_points[i])
        for idx in range(csr.indptr[i], csr.indptr[i + 1]):
            if csr.data[idx] <= 0:
                continue
            x2, y2 = sxy(k.target_points[csr.indices[idx]])
            parts.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}"/>')
    parts.append("</g>")

    parts.append('<g id="destination" fill="#228833" fill-opacity="0.7">')
    wmax = float(dest.weights.max()) or 1.0
    for pt, w in zip(dest.points, dest.weights):
        if w <= 0:
            continue
        x, y = sxy(pt)
        r = 1.5 + 4.0 * float(w) / wmax
        parts.append(f'<circle cx="{x}" cy="{y}" r="{_fmt(r)}"/>')
    parts.append("</g>")
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
