"""Adversarial sample corruption and the outlier-robust W_p distance.

The corruption model gives the adversary two budgets: kept points may move
with average p-th-power displacement at most rho^p, and up to an eps
fraction may be replaced arbitrarily.  The robust distance trims an eps
TV fraction before transporting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import DiscreteKernel, DiscreteKernelStage, KernelPipeline
from .measures import DiscreteMeasure, dirac, make_discrete, support_diameter
from .network_simplex import solve_transport
from .ot_core import DEFAULT_SUPPORT_CAP, pairwise_powered_costs
from .exceptions import SupportCapExceeded

__all__ = [
    "CorruptionBudget",
    "RandomRelocate",
    "DirectedShift",
    "Composite",
    "corrupt",
    "robust_wp",
    "lb_instance_tv",
    "lb_instance_wp",
    "two_point_kernel_grid",
    "TvLowerBoundInstance",
    "WpLowerBoundInstance",
]


@dataclass(frozen=True)
class CorruptionBudget:
    """TV fraction ``eps`` and local-move budget ``rho`` under exponent ``p``."""

    eps: float
    rho: float
    p: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.p < 1:
            raise ValueError("p must be >= 1")


@dataclass(frozen=True)
class RandomRelocate:
    """Replace floor(eps*n) points with draws from an outlier shell.

    Outliers are uniform on a sphere around the data centroid with radius
    ``radius_factor`` times the sample diameter (radius 1 for degenerate
    clouds).
    """

    radius_factor: float = 10.0


@dataclass(frozen=True)
class DirectedShift:
    """Shift every kept point by a fixed vector of norm rho."""

    direction: np.ndarray | None = None


@dataclass(frozen=True)
class Composite:
    """Shift all points by rho, then relocate floor(eps*n) of them."""

    relocate: RandomRelocate = field(default_factory=RandomRelocate)
    shift: DirectedShift = field(default_factory=DirectedShift)


def _unit_direction(strategy: DirectedShift, d: int) -> np.ndarray:
    if strategy.direction is None:
        u = np.zeros(d)
        u[0] = 1.0
        return u
    u = np.asarray(strategy.direction, dtype=np.float64)
    norm = np.linalg.norm(u)
    if norm <= 0:
        raise ValueError("shift direction must be nonzero")
    return u / norm


def _relocate(points, eps, strategy: RandomRelocate, rng):
    n, d = points.shape
    k = int(np.floor(eps * n))
    if eps > 0 and k == 0:
        warnings.warn("eps * n < 1: no points relocated", stacklevel=3)
        return points, np.ones(n, dtype=bool)
    if k == 0:
        return points, np.ones(n, dtype=bool)
    diam = support_diameter(make_discrete(points, np.ones(n)))
    radius = strategy.radius_factor * (diam if diam > 0 else 1.0)
    center = points.mean(axis=0)
    idx = rng.choice(n, size=k, replace=False)
    dirs = rng.standard_normal((k, d))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    out = points.copy()
    out[idx] = center + radius * dirs
    kept = np.ones(n, dtype=bool)
    kept[idx] = False
    return out, kept


def corrupt(samples, budget: CorruptionBudget, strategy, rng: np.random.Generator) -> np.ndarray:
    """Apply an adversary strategy within the budget; same-length output.

    The produced corruption satisfies the budget by construction, which is
    re-checked on the kept set before returning.
    """
    points = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, d = points.shape
    if isinstance(strategy, DirectedShift):
        shifted = points + budget.rho * _unit_direction(strategy, d)[None, :]
        out, kept = shifted, np.ones(n, dtype=bool)
    elif isinstance(strategy, RandomRelocate):
        out, kept = _relocate(points, budget.eps, strategy, rng)
    elif isinstance(strategy, Composite):
        shifted = points + budget.rho * _unit_direction(strategy.shift, d)[None, :]
        out, kept = _relocate(shifted, budget.eps, strategy.relocate, rng)
    else:
        raise TypeError(f"unknown adversary strategy {type(strategy)!r}")
    if kept.sum() < (1.0 - budget.eps) * n - 1e-9:
        raise AssertionError("strategy exceeded the TV budget")
    moved = np.linalg.norm(out[kept] - points[kept], axis=1) ** budget.p
    if moved.sum() / n > budget.rho**budget.p + 1e-9:
        raise AssertionError("strategy exceeded the W_p budget")
    return out


def robust_wp(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    eps: float,
    p: float,
    max_support: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """Outlier-robust W_p: min over mu' in a TV ball of radius eps of W_p(mu', nu).

    Solved exactly as partial transport: an extra zero-cost slack column
    absorbs up to eps of trimmed source mass and an extra zero-cost slack
    row creates the replacement mass, reusing the min-cost-flow core.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    if mu.n > max_support or nu.n > max_support:
        raise SupportCapExceeded(f"supports {mu.n}x{nu.n} exceed cap {max_support}")
    if eps >= 1.0:
        return 0.0
    C = pairwise_powered_costs(mu.points, nu.points, p)
    ext = np.zeros((mu.n + 1, nu.n + 1))
    ext[: mu.n, : nu.n] = C
    total = 1.0 + eps
    supply = np.concatenate([mu.weights, [eps]]) / total
    demand = np.concatenate([nu.weights, [eps]]) / total
    rows, cols, mass = solve_transport(ext, supply, demand)
    real = (rows < mu.n) & (cols < nu.n)
    cost = float((mass[real] * ext[rows[real], cols[real]]).sum()) * total
    return float(max(cost, 0.0) ** (1.0 / p))


# -- least-favorable instances -------------------------------------------------


@dataclass(frozen=True)
class TvLowerBoundInstance:
    """Two candidate sources indistinguishable after eps TV corruption."""

    nu: DiscreteMeasure
    mu1: DiscreteMeasure
    mu2: DiscreteMeasure
    observed: DiscreteMeasure
    eps: float


def lb_instance_tv(eps: float, d: int) -> TvLowerBoundInstance:
    """Target (1-eps) delta_0 + eps delta_y with y = (1,...,1); candidates
    nu itself and delta_0; the observation equals nu under either truth."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie strictly between 0 and 1")
    y = np.ones(d)
    nu = make_discrete(np.vstack([np.zeros(d), y]), np.array([1.0 - eps, eps]))
    mu1 = nu
    mu2 = dirac(np.zeros(d))
    return TvLowerBoundInstance(nu=nu, mu1=mu1, mu2=mu2, observed=nu, eps=eps)


@dataclass(frozen=True)
class WpLowerBoundInstance:
    """Two-point sources within rho in W_p but with conflicting optima."""

    nu: DiscreteMeasure
    mu0: DiscreteMeasure
    mut: DiscreteMeasure
    c: float
    t: float
    rho: float
    p: float


def lb_instance_wp(rho: float, d: int, p: float) -> WpLowerBoundInstance:
    """Symmetric two-point target at +-y; sources concentrated at +-c*y with
    masses (1/2 -+ t); the tuning c = t^(1/p) = min(rho^(1/2) d^(-1/4) / 2, 1/2)
    keeps the pair within W_p distance rho of each other."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if p < 1:
        raise ValueError("p must be >= 1")
    y = np.ones(d)
    c = min(np.sqrt(rho) * d ** (-0.25) / 2.0, 0.5)
    t = c**p
    pts = np.vstack([-c * y, c * y])
    mu0 = make_discrete(pts, np.array([0.5, 0.5]))
    mut = make_discrete(pts, np.array([0.5 - t, 0.5 + t]))
    nu = make_discrete(np.vstack([-y, y]), np.array([0.5, 0.5]))
    return WpLowerBoundInstance(nu=nu, mu0=mu0, mut=mut, c=float(c), t=float(t), rho=rho, p=p)


def two_point_kernel_grid(source_points, target_points, steps: int = 21):
    """All kernels from two source atoms to two target atoms on a grid.

    Yields ``(a0, a1, pipeline)`` where ``a_i`` is the probability that
    source atom i maps to the second target atom.
    """
    source_points = np.atleast_2d(np.asarray(source_points, dtype=np.float64))
    target_points = np.atleast_2d(np.asarray(target_points, dtype=np.float64))
    if source_points.shape[0] != 2 or target_points.shape[0] != 2:
        raise ValueError("grid is defined for two-point supports")
    from scipy import sparse

    grid = np.linspace(0.0, 1.0, steps)
    for a0 in grid:
        for a1 in grid:
            rows = sparse.csr_matrix(np.array([[1.0 - a0, a0], [1.0 - a1, a1]]))
            k = DiscreteKernel(source_points, target_points, rows)
            yield float(a0), float(a1), KernelPipeline((DiscreteKernelStage(k),))
