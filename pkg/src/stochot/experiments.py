"""Synthetic settings, the seeded experiment runner, and result emission.

Every stochastic step derives its generator from the master seed and the
cell coordinates (setting, iteration, sample size, estimator), so a config
plus a master seed determines every artifact byte for byte.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .corruption import Composite, CorruptionBudget, DirectedShift, RandomRelocate, corrupt
from .error_metric import lp_map_distance, transportation_error
from .estimators import build_estimator
from .kernels import (
    DiscreteKernel,
    DiscreteKernelStage,
    DeterministicMap,
    KernelPipeline,
    MonteCarloConfig,
    NearestLookup,
    register_named_map,
)
from .measures import DiscreteMeasure, dirac, empirical, read_measure, sample
from .ot_core import exact_ot, wasserstein_p
from .seeding import derive_rng, derive_seed

__all__ = [
    "SettingData",
    "ExperimentConfig",
    "BootstrapConfig",
    "ResultRow",
    "gen_setting_a",
    "gen_setting_b",
    "gen_figure2",
    "gen_checkerboard",
    "lb_instance_sampling",
    "generate_setting",
    "run_experiment",
    "bootstrap_quantiles",
    "summarize",
    "emit_csv",
    "read_rows_csv",
]


# -- named maps used by the synthetic settings ---------------------------------

register_named_map(
    "orthant_shift",
    lambda params: lambda X: X + np.sign(X),
)


def _band_map(params):
    delta = float(params["delta"])
    flip = -1.0 if params.get("flip") else 1.0

    def fn(X):
        band = np.floor(X[:, 1] / delta).astype(np.int64)
        first = flip * np.where(band % 2 == 0, 1.0, -1.0)
        return np.c_[first, X[:, 1]]

    return fn


register_named_map("band_map", _band_map)


@dataclass(frozen=True)
class SettingData:
    """Ground-truth instance: measures plus optional reference pipelines."""

    name: str
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    t_star: KernelPipeline | None = None
    extra: dict = field(default_factory=dict, compare=False)


def _lookup_map(xs: np.ndarray, images: np.ndarray, ys: np.ndarray) -> KernelPipeline:
    """Deterministic map defined by a lookup table, extended by nearest source."""
    n = xs.shape[0]
    rows = sparse.csr_matrix((np.ones(n), (np.arange(n), images)), shape=(n, ys.shape[0]))
    return KernelPipeline((NearestLookup(xs), DiscreteKernelStage(DiscreteKernel(xs, ys, rows))))


def gen_setting_a(N: int, d: int, rng: np.random.Generator) -> SettingData:
    """Source on the slab {0} x [0,1]^(d-1); target splits over the two
    hyperplanes at -1 and +1.  The reference map is the optimal assignment
    between the clouds (a permutation, highly oscillatory)."""
    if d < 2:
        raise ValueError("setting A needs d >= 2")
    mu_pts = np.c_[np.zeros(N), rng.random((N, d - 1))]
    signs = rng.choice([-1.0, 1.0], size=N)
    nu_pts = np.c_[signs, rng.random((N, d - 1))]
    mu, nu = empirical(mu_pts), empirical(nu_pts)
    plan = exact_ot(mu, nu, 1.0)
    images = np.empty(N, dtype=np.int64)
    best = np.full(N, -1.0)
    for i, j, m in zip(plan.rows, plan.cols, plan.mass):
        if m > best[i]:
            best[i] = m
            images[i] = j
    t_star = _lookup_map(mu_pts, images, nu_pts)
    return SettingData("a", mu, nu, t_star, extra={"w1": plan.cost_value})


def gen_setting_b(N: int, d: int, rng: np.random.Generator) -> SettingData:
    """Source uniform on [-1,1]^d; the map pushes each orthant one unit
    away from the origin, so it is optimal but discontinuous."""
    mu_pts = rng.random((N, d)) * 2.0 - 1.0
    f = DeterministicMap.named("orthant_shift")
    nu_pts = f.apply(mu_pts)
    t_star = KernelPipeline((f,))
    return SettingData("b", empirical(mu_pts), empirical(nu_pts), t_star)


def gen_figure2(M: int, delta: float) -> SettingData:
    """Oscillating-band instance on the segment {0} x [0,1].

    The reference map flips the first coordinate sign every ``delta`` band;
    the two-point kernel splitting evenly between -1 and +1 has zero
    optimality gap and feasibility gap at most ``delta``.
    """
    if M < 2:
        raise ValueError("need at least two grid points")
    if delta <= 0:
        raise ValueError("delta must be positive")
    # midpoint grid: equispaced in [0,1] and never on a band boundary, so
    # the alternating bands stay balanced and the flipped map attains the
    # continuum feasibility gap of exactly delta
    xs2 = (np.arange(M) + 0.5) / M
    mu_pts = np.c_[np.zeros(M), xs2]
    t_star_map = DeterministicMap.named("band_map", delta=delta, flip=False)
    t_flip_map = DeterministicMap.named("band_map", delta=delta, flip=True)
    nu_pts = t_star_map.apply(mu_pts)
    mu, nu = empirical(mu_pts), empirical(nu_pts)
    # stochastic reference kernel: half mass to each of (+-1, x2)
    targets = np.vstack([np.c_[-np.ones(M), xs2], np.c_[np.ones(M), xs2]])
    rows = sparse.csr_matrix(
        (
            np.full(2 * M, 0.5),
            (np.tile(np.arange(M), 2), np.r_[np.arange(M), np.arange(M) + M]),
        ),
        shape=(M, 2 * M),
    )
    kappa_star = KernelPipeline(
        (NearestLookup(mu_pts), DiscreteKernelStage(DiscreteKernel(mu_pts, targets, rows)))
    )
    return SettingData(
        "figure2",
        mu,
        nu,
        KernelPipeline((t_star_map,)),
        extra={"kappa_star": kappa_star, "t_flip": KernelPipeline((t_flip_map,)), "delta": delta},
    )


def gen_checkerboard(cells: int, N: int, rng: np.random.Generator) -> SettingData:
    """Complementary checkerboard cells of the unit square."""
    if cells % 2 != 0:
        raise ValueError("cell count per side must be even")

    def draw(color: int) -> np.ndarray:
        ij = rng.integers(0, cells, size=(4 * N, 2))
        keep = (ij.sum(axis=1) % 2) == color
        ij = ij[keep][:N]
        while ij.shape[0] < N:  # top up, vanishingly rare
            extra = rng.integers(0, cells, size=(4 * N, 2))
            extra = extra[(extra.sum(axis=1) % 2) == color]
            ij = np.vstack([ij, extra])[:N]
        return (ij + rng.random((N, 2))) / cells

    return SettingData("checkerboard", empirical(draw(0)), empirical(draw(1)))


def lb_instance_sampling(nu: DiscreteMeasure) -> SettingData:
    """Point-mass source fixture: estimating the kernel then reduces to
    estimating the target distribution."""
    return SettingData("sampling-lb", dirac(np.zeros(nu.dim)), nu)


# -- experiment configuration ---------------------------------------------------


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    quantiles: tuple = (0.1, 0.9)

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("bootstrap needs B >= 1")


_ADVERSARIES = {
    "relocate": RandomRelocate,
    "shift": DirectedShift,
    "composite": Composite,
}


@dataclass(frozen=True)
class ExperimentConfig:
    setting: str = "a"
    d: int = 3
    N: int = 2000
    n_grid: tuple = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
    K: int = 100
    estimators: tuple = (("nn", {}), ("rounding-cubic", {}))
    p: float = 1.0
    budget: CorruptionBudget | None = None
    adversary: str = "composite"
    master_seed: int = 0
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    mc: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    mu_path: str | None = None  # custom setting inputs
    nu_path: str | None = None
    cells: int = 8  # checkerboard resolution
    figure2_delta: float = 0.05
    include_timings: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("need K >= 1 iterations")
        if any(n > self.N for n in self.n_grid):
            raise ValueError("subsample sizes must not exceed the support size N")
        if self.adversary not in _ADVERSARIES:
            raise ValueError(f"unknown adversary {self.adversary!r}")
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        ests = []
        for item in self.estimators:
            if isinstance(item, str):
                ests.append((item, {}))
            else:
                name, overrides = item
                ests.append((str(name), dict(overrides)))
        object.__setattr__(self, "estimators", tuple((n, dict(o)) for n, o in ests))

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        payload = dict(payload)
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "budget" in payload and payload["budget"] is not None and not isinstance(
            payload["budget"], CorruptionBudget
        ):
            b = payload["budget"]
            payload["budget"] = CorruptionBudget(
                float(b.get("eps", 0.0)), float(b.get("rho", 0.0)), float(b.get("p", payload.get("p", 1.0)))
            )
        if "bootstrap" in payload and not isinstance(payload["bootstrap"], BootstrapConfig):
            b = payload["bootstrap"]
            payload["bootstrap"] = BootstrapConfig(int(b.get("B", 1000)), tuple(b.get("quantiles", (0.1, 0.9))))
        if "mc" in payload and not isinstance(payload["mc"], MonteCarloConfig):
            m = payload["mc"]
            payload["mc"] = MonteCarloConfig(
                int(m.get("samples", 10_000)), int(m.get("seed", 0)), int(m.get("replicates", 10))
            )
        if "estimators" in payload:
            ests = []
            for item in payload["estimators"]:
                if isinstance(item, str):
                    ests.append((item, {}))
                elif isinstance(item, dict):
                    ests.append((item["name"], {k: v for k, v in item.items() if k != "name"}))
                else:
                    name, overrides = item
                    ests.append((name, dict(overrides)))
            payload["estimators"] = tuple(ests)
        if "n_grid" in payload:
            payload["n_grid"] = tuple(int(v) for v in payload["n_grid"])
        return cls(**payload)


@dataclass(frozen=True)
class ResultRow:
    setting: str
    d: int
    n: int
    seed: int
    estimator: str
    metric: str
    value: float


def generate_setting(cfg: ExperimentConfig) -> SettingData:
    rng = derive_rng(cfg.master_seed, cfg.setting, cfg.d, "gen")
    if cfg.setting == "a":
        return gen_setting_a(cfg.N, cfg.d, rng)
    if cfg.setting == "b":
        return gen_setting_b(cfg.N, cfg.d, rng)
    if cfg.setting == "figure2":
        return gen_figure2(cfg.N, cfg.figure2_delta)
    if cfg.setting == "checkerboard":
        return gen_checkerboard(cfg.cells, cfg.N, rng)
    if cfg.setting == "custom":
        if not cfg.mu_path or not cfg.nu_path:
            raise ValueError("custom setting requires mu_path and nu_path")
        return SettingData("custom", read_measure(cfg.mu_path), read_measure(cfg.nu_path))
    raise ValueError(f"unknown setting {cfg.setting!r}")


def _worker_count() -> int:
    env = os.environ.get("STOCHOT_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _run_cell(cfg: ExperimentConfig, data: SettingData, wp_base: float, k: int, n: int,
              name: str, overrides: dict) -> list[ResultRow]:
    rows: list[ResultRow] = []

    def add(metric: str, value: float):
        rows.append(ResultRow(cfg.setting, cfg.d, n, k, name, metric, float(value)))

    t0 = time.perf_counter()
    try:
        xs = sample(data.mu, n, derive_rng(cfg.master_seed, cfg.setting, cfg.d, k, n, "x"))
        ys = sample(data.nu, n, derive_rng(cfg.master_seed, cfg.setting, cfg.d, k, n, "y"))
        overrides = dict(overrides)
        if cfg.budget is not None:
            strat = _ADVERSARIES[cfg.adversary]()
            xs = corrupt(xs, cfg.budget, strat, derive_rng(cfg.master_seed, cfg.setting, cfg.d, k, n, "cx"))
            ys = corrupt(ys, cfg.budget, strat, derive_rng(cfg.master_seed, cfg.setting, cfg.d, k, n, "cy"))
            overrides.setdefault("eps", cfg.budget.eps)
            overrides.setdefault("rho", cfg.budget.rho)
        pipe = build_estimator(
            name, xs, ys, cfg.p, overrides,
            rng=derive_rng(cfg.master_seed, cfg.setting, cfg.d, k, n, name, "build"),
        )
        mc = MonteCarloConfig(
            cfg.mc.samples,
            derive_seed(cfg.master_seed, cfg.setting, cfg.d, k, n, name, "mc"),
            cfg.mc.replicates,
        )
        report = transportation_error(pipe, data.mu, data.nu, cfg.p, mc=mc, wp_mu_nu=wp_base)
        add("ep", report.ep)
        add("optimality_gap", report.optimality_gap)
        add("feasibility_gap", report.feasibility_gap)
        if report.mc_stderr > 0:
            add("mc_stderr", report.mc_stderr)
        if data.t_star is not None and pipe.is_deterministic:
            add("lp_vs_tstar", lp_map_distance(pipe, data.t_star, data.mu, cfg.p))
    except Exception:
        add("ep", float("nan"))
    add("wall_time_ms", (time.perf_counter() - t0) * 1000.0)
    return rows


def run_experiment(cfg: ExperimentConfig, data: SettingData | None = None) -> list[ResultRow]:
    """Run the (seed x sample-size x estimator) grid against one setting.

    Cells are independent and may run on a thread pool (capped by the
    STOCHOT_THREADS environment variable); results are gathered in sorted
    cell order, so scheduling never changes the output.
    """
    if data is None:
        data = generate_setting(cfg)
    wp_base = wasserstein_p(data.mu, data.nu, cfg.p)
    cells = [
        (k, n, name, overrides)
        for k in range(cfg.K)
        for n in cfg.n_grid
        for name, overrides in cfg.estimators
    ]
    workers = _worker_count()
    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(
                pool.map(lambda c: _run_cell(cfg, data, wp_base, *c), cells)
            )
    else:
        chunks = [_run_cell(cfg, data, wp_base, *c) for c in cells]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r.setting, r.d, r.n, r.seed, r.estimator, r.metric))
    return rows


def bootstrap_quantiles(values, B: int, qs, rng: np.random.Generator) -> dict[float, float]:
    """Quantiles of bootstrap resample means of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("bootstrap needs at least one value")
    idx = rng.integers(0, values.size, size=(B, values.size))
    means = values[idx].mean(axis=1)
    return {float(q): float(np.quantile(means, q)) for q in qs}


def summarize(rows: list[ResultRow], cfg: ExperimentConfig, metric: str = "ep"):
    """Per (estimator, d, n): mean of per-seed values plus bootstrap bands.

    Returns a list of dicts sorted by keys; bootstrap draws derive from the
    master seed so summaries are reproducible.
    """
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r.metric != metric or not np.isfinite(r.value):
            continue
        groups.setdefault((r.estimator, r.d, r.n), []).append(r.value)
    out = []
    for (est, d, n), vals in sorted(groups.items()):
        rng = derive_rng(cfg.master_seed, "bootstrap", metric, est, d, n)
        bands = bootstrap_quantiles(vals, cfg.bootstrap.B, cfg.bootstrap.quantiles, rng)
        entry = {"estimator": est, "d": d, "n": n, "mean": float(np.mean(vals)), "count": len(vals)}
        for q, v in bands.items():
            entry[f"q{q:g}"] = v
        out.append(entry)
    return out


CSV_HEADER = ("setting", "d", "n", "seed", "estimator", "metric", "value")


def emit_csv(rows: list[ResultRow], path, metadata: dict | None = None,
             include_timings: bool = False) -> None:
    """Write rows with `# key=value` metadata comment lines up front.

    Timing rows are volatile and excluded unless explicitly requested, so
    identical configs give byte-identical files.
    """
    if not rows:
        raise ValueError("no rows to emit")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for key in sorted((metadata or {})):
            fh.write(f"# {key}={metadata[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            if r.metric == "wall_time_ms" and not include_timings:
                continue
            writer.writerow(
                [r.setting, r.d, r.n, r.seed, r.estimator, r.metric, repr(r.value)]
            )


def read_rows_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
        reader = csv.reader([line] + fh.readlines())
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header}")
        for rec in reader:
            if not rec:
                continue
            rows.append(
                ResultRow(rec[0], int(rec[1]), int(rec[2]), int(rec[3]), rec[4], rec[5], float(rec[6]))
            )
    return rows
