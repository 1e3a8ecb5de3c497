"""Discrete probability measures on R^d.

A measure is a finite weighted point cloud.  Weights are normalized at
construction; atoms at identical coordinates are kept separate in the
stored measure (sample provenance matters downstream) and merged only
inside distance computations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DiscreteMeasure",
    "make_discrete",
    "dirac",
    "empirical",
    "sample",
    "tv_distance",
    "ks_distance_1d",
    "aggregate_atoms",
    "support_diameter",
    "read_measure",
    "write_measure",
]

WEIGHT_TOL = 1e-12


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        # a flat list of scalars is read as 1-d points
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise ValueError(f"points must form an (n, d) array, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise ValueError("measure needs at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    return pts


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite weighted point cloud; weights sum to one.

    Attributes
    ----------
    points : (n, d) float64 array, read-only
    weights : (n,) float64 array, read-only, nonnegative, sums to 1
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != pts.shape[0]:
            raise ValueError("weights must be a vector matching the number of points")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = float(w.sum())
        if total <= 0:
            raise ValueError("weights must have positive sum")
        if abs(total - 1.0) > WEIGHT_TOL:
            w = w / total  # silent renormalization per contract
        else:
            w = w.copy()
        pts = pts.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n}, d={self.dim})"


def make_discrete(points, weights) -> DiscreteMeasure:
    """Build a measure from points and nonnegative weights.

    Weights are normalized to sum 1.  Duplicate points are kept, not merged.
    """
    return DiscreteMeasure(np.asarray(points, dtype=np.float64), weights)


def dirac(point) -> DiscreteMeasure:
    """Point mass at ``point``."""
    pts = np.asarray(point, dtype=np.float64).reshape(1, -1)
    return DiscreteMeasure(pts, np.ones(1))


def empirical(samples) -> DiscreteMeasure:
    """Uniform measure (weight 1/n) on the given sample points, duplicates kept."""
    pts = _as_points(samples)
    n = pts.shape[0]
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))


def sample(m: DiscreteMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. points from ``m`` (categorical over its atoms).

    Returns an (n, d) array; deterministic given the generator state.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    idx = rng.choice(m.n, size=n, replace=True, p=m.weights)
    return m.points[idx].copy()


def aggregate_atoms(m: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Merge atoms at bit-identical coordinates; returns (points, weights).

    Used inside distance computations only; stored measures are never merged.
    """
    uniq, inverse = np.unique(m.points, axis=0, return_inverse=True)
    w = np.bincount(inverse.ravel(), weights=m.weights, minlength=uniq.shape[0])
    return uniq, w


def _check_same_dim(a: DiscreteMeasure, b: DiscreteMeasure):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def tv_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Total-variation distance, atoms merged on identical coordinates."""
    _check_same_dim(a, b)
    merged = np.vstack([a.points, b.points])
    uniq, inverse = np.unique(merged, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    k = uniq.shape[0]
    wa = np.bincount(inverse[: a.n], weights=a.weights, minlength=k)
    wb = np.bincount(inverse[a.n :], weights=b.weights, minlength=k)
    return 0.5 * float(np.abs(wa - wb).sum())


def ks_distance_1d(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Kolmogorov-Smirnov distance sup_t |F_a(t) - F_b(t)| for 1-d measures."""
    _check_same_dim(a, b)
    if a.dim != 1:
        raise ValueError("KS distance is defined for 1-d measures only")
    xs = np.concatenate([a.points[:, 0], b.points[:, 0]])
    signed = np.concatenate([a.weights, -b.weights])
    order = np.argsort(xs, kind="stable")
    xs, signed = xs[order], signed[order]
    diff = np.cumsum(signed)
    # right-continuous CDFs: evaluate after absorbing all atoms at each breakpoint
    last_of_run = np.r_[xs[1:] != xs[:-1], True]
    return float(np.abs(diff[last_of_run]).max())


def support_diameter(*measures: DiscreteMeasure) -> float:
    """Exact diameter of the union of the supports."""
    pts = np.vstack([m.points for m in measures])
    best = 0.0
    chunk = 256
    for i in range(0, pts.shape[0], chunk):
        d = np.linalg.norm(pts[i : i + chunk, None, :] - pts[None, :, :], axis=2)
        best = max(best, float(d.max()))
    return best


# -- file formats -------------------------------------------------------------
# CSV: header x1,...,xd,weight (weight column optional -> uniform).
# JSON: {"points": [[...], ...], "weights": [...]} (weights optional).


def write_measure(m: DiscreteMeasure, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        payload = {"points": m.points.tolist(), "weights": m.weights.tolist()}
        path.write_text(json.dumps(payload))
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(m.dim)] + ["weight"])
        for p, w in zip(m.points, m.weights):
            writer.writerow([repr(float(v)) for v in p] + [repr(float(w))])


def read_measure(path) -> DiscreteMeasure:
    path = Path(path)
    if path.suffix.lower() == ".json":
        payload = json.loads(path.read_text())
        pts = np.asarray(payload["points"], dtype=np.float64)
        weights = payload.get("weights")
        if weights is None:
            return empirical(pts)
        return make_discrete(pts, np.asarray(weights, dtype=np.float64))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_weight = header and header[-1].strip().lower() == "weight"
        ncols = len(header) - (1 if has_weight else 0)
        pts, weights = [], []
        for row in reader:
            if not row:
                continue
            pts.append([float(v) for v in row[:ncols]])
            if has_weight:
                weights.append(float(row[ncols]))
    if not pts:
        raise ValueError(f"no data rows in {path}")
    if has_weight:
        return make_discrete(np.asarray(pts), np.asarray(weights))
    return empirical(np.asarray(pts))
