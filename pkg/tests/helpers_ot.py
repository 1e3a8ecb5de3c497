"""Shared random-instance generators for the test suite."""

from __future__ import annotations

import numpy as np

from stochot.kernels import (
    DiscreteKernel,
    DiscreteKernelStage,
    KernelPipeline,
    NearestLookup,
    kernel_from_plan,
)
from stochot.measures import DiscreteMeasure, make_discrete
from stochot.ot_core import exact_ot
from scipy import sparse


def random_measure(rng, n=None, d=None, box=1.0, uniform=False) -> DiscreteMeasure:
    n = int(n if n is not None else rng.integers(1, 12))
    d = int(d if d is not None else rng.integers(1, 4))
    pts = rng.random((n, d)) * box
    if uniform:
        w = np.full(n, 1.0 / n)
    else:
        w = rng.dirichlet(np.ones(n))
    return make_discrete(pts, w)


def extended(kernel: DiscreteKernel) -> KernelPipeline:
    """Make a finite kernel evaluable on all of R^d via nearest-source lookup."""
    return KernelPipeline((NearestLookup(kernel.source_points), DiscreteKernelStage(kernel)))


def random_kernel(rng, source_points, target_points, kind: str) -> KernelPipeline:
    """Kernels of the three flavors the stability checks quantify over:
    optimal (from an exact plan), dirichlet (random row-stochastic), and
    assignment (deterministic random images)."""
    ns = source_points.shape[0]
    nt = target_points.shape[0]
    if kind == "optimal":
        mu = make_discrete(source_points, np.full(ns, 1.0 / ns))
        nu = make_discrete(target_points, rng.dirichlet(np.ones(nt)))
        return extended(kernel_from_plan(exact_ot(mu, nu, 2.0)))
    if kind == "dirichlet":
        rows = sparse.csr_matrix(rng.dirichlet(np.ones(nt), size=ns))
        return extended(DiscreteKernel(source_points, target_points, rows))
    if kind == "assignment":
        images = rng.integers(0, nt, size=ns)
        rows = sparse.csr_matrix(
            (np.ones(ns), (np.arange(ns), images)), shape=(ns, nt)
        )
        return extended(DiscreteKernel(source_points, target_points, rows))
    raise ValueError(kind)
