"""Space partitions with center-based rounding maps.

Two kinds:
  * ``CubicPartition`` - the regular grid of half-open cubes, rounded to
    cell midpoints; cells are materialized lazily (only occupied ones ever
    exist as data).
  * ``ShellVoronoiPartition`` - a covering of the unit ball dilated across
    dyadic shells; supports heavy-tailed sources with a per-shell cell
    count that never exceeds ``delta**-d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

__all__ = ["CubicPartition", "ShellVoronoiPartition", "round_point"]


@dataclass(frozen=True)
class CubicPartition:
    """Half-open cubes [k*r, (k+1)*r)^d shifted by ``offset``."""

    r: float
    offset: np.ndarray

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("cube side must be positive")
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=np.float64))

    def cell_indices(self, points: np.ndarray) -> np.ndarray:
        return np.floor((points - self.offset[None, :]) / self.r).astype(np.int64)

    def round_points(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return self.offset[None, :] + (self.cell_indices(points) + 0.5) * self.r

    @property
    def max_cell_radius(self) -> float:
        # half-diagonal: the worst rounding displacement
        return float(np.sqrt(self.offset.shape[0]) * self.r / 2.0)

    def to_dict(self) -> dict:
        return {"kind": "cubic", "r": self.r, "offset": self.offset.tolist()}


def greedy_ball_covering(d: int, radius: float, max_cells: int) -> np.ndarray:
    """Deterministic covering of the unit ball with covering radius <= ``radius``.

    Greedy farthest-point selection over a fixed quasi-random candidate set
    (Halton, unscrambled).  Selection stops once every candidate lies within
    0.9 * radius of an anchor; the slack absorbs the candidate mesh gap.
    Raises if more than ``max_cells`` anchors would be needed.
    """
    n_cand = min(int(60 * (2.0 / radius) ** d) + 1024, 300_000)
    sampler = qmc.Halton(d=d, scramble=False)
    raw = sampler.random(n_cand) * 2.0 - 1.0
    cand = raw[np.linalg.norm(raw, axis=1) <= 1.0]
    cand = np.vstack([np.zeros((1, d)), cand])
    anchors = [cand[0]]
    dist = np.linalg.norm(cand - cand[0], axis=1)
    threshold = 0.9 * radius
    while dist.max() > threshold:
        pick = int(np.argmax(dist))
        anchors.append(cand[pick])
        if len(anchors) > max_cells:
            raise ValueError(
                f"covering of the unit ball needs more than {max_cells} cells "
                f"at radius {radius}; covering construction is inconsistent"
            )
        dist = np.minimum(dist, np.linalg.norm(cand - cand[pick], axis=1))
    return np.asarray(anchors)


@dataclass(frozen=True)
class ShellVoronoiPartition:
    """Voronoi cells of a ball covering, dilated across dyadic shells.

    Shell 0 is the unit ball; shell i covers 2^i B \\ 2^{i-1} B.  A point in
    shell i rounds to ``2**i * a`` for its nearest base anchor ``a`` (ties
    -> lowest index).  The outermost shell extends outward unboundedly.
    """

    delta: float
    base_anchors: np.ndarray
    shell_count_cap: int = 40

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        anchors = np.atleast_2d(np.asarray(self.base_anchors, dtype=np.float64))
        if anchors.shape[0] == 0:
            raise ValueError("anchor set must be nonempty")
        object.__setattr__(self, "base_anchors", anchors)

    @classmethod
    def build(cls, delta: float, d: int, shell_count_cap: int = 40) -> "ShellVoronoiPartition":
        max_cells = max(1, int(np.floor(delta ** (-d) + 1e-9)))
        anchors = greedy_ball_covering(d, 3.0 * delta, max_cells)
        return cls(delta, anchors, shell_count_cap)

    def shell_index(self, points: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(points, axis=1)
        idx = np.zeros(points.shape[0], dtype=np.int64)
        outside = norms > 1.0
        idx[outside] = np.ceil(np.log2(norms[outside])).astype(np.int64)
        return np.clip(idx, 0, self.shell_count_cap - 1)

    def round_points(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        shell = self.shell_index(points)
        scale = np.power(2.0, shell.astype(np.float64))
        z = points / scale[:, None]
        d2 = ((z[:, None, :] - self.base_anchors[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
        return self.base_anchors[nearest] * scale[:, None]

    def to_dict(self) -> dict:
        return {
            "kind": "shell",
            "delta": self.delta,
            "anchors": self.base_anchors.tolist(),
            "shell_count_cap": self.shell_count_cap,
        }


def partition_from_dict(payload: dict):
    kind = payload.get("kind")
    if kind == "cubic":
        return CubicPartition(float(payload["r"]), np.asarray(payload["offset"]))
    if kind == "shell":
        return ShellVoronoiPartition(
            float(payload["delta"]),
            np.asarray(payload["anchors"]),
            int(payload.get("shell_count_cap", 40)),
        )
    raise ValueError(f"unknown partition kind: {kind!r}")


def round_point(partition, x) -> np.ndarray:
    """Center of the cell containing ``x``."""
    return partition.round_points(np.atleast_2d(x))[0]
