"""Transportation-error evaluation of kernels.

The headline functional scores a kernel against a transport problem by
how much transport cost it pays beyond the optimum (optimality gap) plus
how far its pushforward lands from the target (feasibility gap).  It
vanishes exactly on optimal kernels and needs no optimal map to exist.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import SolverFailure
from .kernels import MonteCarloConfig, map_apply, pushforward, transport_cost
from .measures import DiscreteMeasure
from .ot_core import DEFAULT_SUPPORT_CAP, wasserstein_p
from .seeding import derive_seed

__all__ = ["EpReport", "transportation_error", "monge_gap_error", "lp_map_distance"]


@dataclass(frozen=True)
class EpReport:
    """Decomposed transportation error of a kernel.

    ``ep = optimality_gap + feasibility_gap`` with
    ``optimality_gap = max(transport_cost - wp_mu_nu, 0)``.
    ``mc_stderr`` is zero whenever evaluation was exact.
    """

    transport_cost: float
    wp_mu_nu: float
    optimality_gap: float
    feasibility_gap: float
    ep: float
    mc_stderr: float

    def __post_init__(self):
        vals = (
            self.transport_cost,
            self.wp_mu_nu,
            self.optimality_gap,
            self.feasibility_gap,
            self.ep,
            self.mc_stderr,
        )
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ValueError("report fields must be finite and nonnegative")
        if abs(self.ep - (self.optimality_gap + self.feasibility_gap)) > 1e-12:
            raise ValueError("ep must decompose into the two gaps")

    def to_json(self) -> str:
        return json.dumps(
            {
                "transport_cost": self.transport_cost,
                "wp_mu_nu": self.wp_mu_nu,
                "optimality_gap": self.optimality_gap,
                "feasibility_gap": self.feasibility_gap,
                "ep": self.ep,
                "mc_stderr": self.mc_stderr,
            }
        )


def _single_eval(k, mu, nu, p, mc, max_support):
    tc = transport_cost(k, mu, p, mc)
    push = pushforward(k, mu, mc)
    feas = wasserstein_p(push, nu, p, max_support=max_support)
    return tc, feas


def transportation_error(
    k,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: float,
    mc: MonteCarloConfig | None = None,
    max_support: int = DEFAULT_SUPPORT_CAP,
    wp_mu_nu: float | None = None,
) -> EpReport:
    """Evaluate a kernel for the transport problem from ``mu`` to ``nu``.

    Exact (finite sums) whenever the pipeline has no continuous stochastic
    stage.  Otherwise each quantity is a Monte Carlo estimate; the whole
    evaluation is repeated over ``mc.replicates`` independent seeds and the
    standard error of the total is reported, never silently absorbed.

    ``wp_mu_nu`` may be supplied by callers that already solved the base
    problem (the experiment runner caches it per instance).
    """
    from .kernels import _as_pipeline  # local import to keep module surfaces tidy

    if wp_mu_nu is None:
        wp_mu_nu = wasserstein_p(mu, nu, p, max_support=max_support)
    pipe = _as_pipeline(k)
    if not pipe.is_stochastic_continuous:
        tc, feas = _single_eval(pipe, mu, nu, p, None, max_support)
        opt = max(tc - wp_mu_nu, 0.0)
        return EpReport(tc, wp_mu_nu, opt, feas, opt + feas, 0.0)

    if mc is None:
        raise ValueError("Monte Carlo config required for stochastic-continuous kernels")
    reps = max(1, mc.replicates)
    tcs, feass, eps = [], [], []
    for r in range(reps):
        sub = MonteCarloConfig(mc.samples, derive_seed(mc.seed, "replicate", r), 1)
        tc, feas = _single_eval(pipe, mu, nu, p, sub, max_support)
        tcs.append(tc)
        feass.append(feas)
        eps.append(max(tc - wp_mu_nu, 0.0) + feas)
    tc = float(np.mean(tcs))
    feas = float(np.mean(feass))
    opt = max(tc - wp_mu_nu, 0.0)
    stderr = float(np.std(eps, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    return EpReport(tc, wp_mu_nu, opt, feas, opt + feas, stderr)


def monge_gap_error(
    k,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: float,
    mc: MonteCarloConfig | None = None,
    max_support: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """Alternative error: (monge gap + pushforward mismatch^p)^(1/p).

    The monge gap (transport cost^p minus the optimal cost onto the
    kernel's own pushforward) is provably nonnegative; values below -1e-9
    indicate a solver bug and raise.
    """
    tc = transport_cost(k, mu, p, mc)
    push = pushforward(k, mu, mc)
    w_self = wasserstein_p(mu, push, p, max_support=max_support)
    w_out = wasserstein_p(push, nu, p, max_support=max_support)
    gap = tc**p - w_self**p
    if gap < -1e-9:
        raise SolverFailure(f"negative monge gap {gap}: transport solver inconsistency")
    gap = max(gap, 0.0)
    return float((gap + w_out**p) ** (1.0 / p))


def lp_map_distance(t, t_star, mu: DiscreteMeasure, p: float) -> float:
    """L^p(mu) distance between two deterministic pipelines."""
    a = map_apply(t, mu.points)
    b = map_apply(t_star, mu.points)
    d = np.linalg.norm(a - b, axis=1)
    return float((mu.weights * (d if p == 1 else d**p)).sum() ** (1.0 / p))
