"""Markov kernels as composable pipelines of stages.

A ``KernelPipeline`` applies its stages left to right to an input point.
Each stage knows how to (a) push a finite discrete distribution through
itself exactly, via a sparse conditional matrix, and (b) sample one output
per input point.  Pipelines whose stages all have finite reachable sets
support exact pushforwards and transport costs; a Gaussian stage switches
evaluation to Monte Carlo.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .measures import DiscreteMeasure, empirical, make_discrete
from .ot_core import TransportPlan
from .partitions import partition_from_dict

__all__ = [
    "DiscreteKernel",
    "KernelPipeline",
    "MonteCarloConfig",
    "DeterministicMap",
    "NearestLookup",
    "GaussianConvolution",
    "DiscreteKernelStage",
    "RoundToPartition",
    "SoftmaxKernelStage",
    "Cdf1dKernelStage",
    "kernel_from_plan",
    "pushforward",
    "compose",
    "transport_cost",
    "evaluate_at",
    "map_apply",
    "identity_pipeline",
    "constant_pipeline",
    "register_named_map",
    "pipeline_to_json",
    "pipeline_from_json",
    "kernel_to_json",
    "kernel_from_json",
]

ROW_TOL = 1e-12


@dataclass(frozen=True)
class MonteCarloConfig:
    """Sampling budget for pipelines with a continuous stochastic stage."""

    samples: int = 10_000
    seed: int = 0
    replicates: int = 10

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("Monte Carlo needs at least one sample")


@dataclass(frozen=True)
class DiscreteKernel:
    """Row-stochastic conditional distributions between finite supports."""

    source_points: np.ndarray
    target_points: np.ndarray
    rows: sparse.csr_matrix
    uniform_fill: np.ndarray | None = None  # rows invented for unreachable sources

    def __post_init__(self):
        sp = np.atleast_2d(np.asarray(self.source_points, dtype=np.float64))
        tp = np.atleast_2d(np.asarray(self.target_points, dtype=np.float64))
        rows = sparse.csr_matrix(self.rows)
        if rows.shape != (sp.shape[0], tp.shape[0]):
            raise ValueError("row matrix shape must be (n_source, n_target)")
        if rows.nnz and rows.data.min() < 0:
            raise ValueError("kernel rows must be nonnegative")
        sums = np.asarray(rows.sum(axis=1)).ravel()
        if np.abs(sums - 1.0).max() > ROW_TOL:
            raise ValueError("kernel rows must sum to one")
        object.__setattr__(self, "source_points", sp)
        object.__setattr__(self, "target_points", tp)
        object.__setattr__(self, "rows", rows)

    @property
    def n_source(self) -> int:
        return self.source_points.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_points.shape[0]


def kernel_from_plan(plan: TransportPlan) -> DiscreteKernel:
    """Disintegrate a coupling into its conditional rows.

    Rows with zero source mass carry no information; they are filled with
    the uniform distribution and flagged via ``uniform_fill``.
    """
    n, m = plan.source.n, plan.target.n
    mat = sparse.coo_matrix((plan.mass, (plan.rows, plan.cols)), shape=(n, m)).tocsr()
    sums = np.asarray(mat.sum(axis=1)).ravel()
    fill = sums <= 0
    inv = np.where(fill, 1.0, 1.0 / np.where(sums > 0, sums, 1.0))
    mat = sparse.diags(inv) @ mat
    if fill.any():
        filler = sparse.csr_matrix(
            (np.full(int(fill.sum()) * m, 1.0 / m),
             (np.repeat(np.flatnonzero(fill), m), np.tile(np.arange(m), int(fill.sum())))),
            shape=(n, m),
        )
        mat = mat + filler
    return DiscreteKernel(plan.source.points, plan.target.points, mat, uniform_fill=fill)


# -- stages -------------------------------------------------------------------

_NAMED_MAPS: dict = {}


def register_named_map(name: str, builder) -> None:
    """Register a serializable deterministic map: ``builder(params) -> fn``.

    ``fn`` maps an (n, d) batch to an (n, d') batch.
    """
    _NAMED_MAPS[name] = builder


def _build_named(name, params):
    if name not in _NAMED_MAPS:
        raise ValueError(f"unknown named map {name!r}")
    return _NAMED_MAPS[name](params)


register_named_map("identity", lambda params: lambda X: X)
register_named_map(
    "constant",
    lambda params: lambda X: np.tile(np.asarray(params["point"], dtype=np.float64), (X.shape[0], 1)),
)
register_named_map(
    "affine",
    lambda params: lambda X, A=np.asarray(params["matrix"], dtype=np.float64), b=np.asarray(
        params["offset"], dtype=np.float64
    ): X @ A.T + b[None, :],
)


@dataclass(frozen=True)
class DeterministicMap:
    """Pure point map; carries a registry name when it must serialize.

    ``codomain`` is a free-form note describing where outputs land (for
    humans and pipeline validation messages, not enforced).
    """

    fn: object
    name: str | None = None
    params: dict = field(default_factory=dict)
    codomain: str | None = None

    @classmethod
    def named(cls, name: str, codomain: str | None = None, **params) -> "DeterministicMap":
        return cls(_build_named(name, params), name=name, params=params, codomain=codomain)

    is_stochastic = False
    is_deterministic = True

    def apply(self, points: np.ndarray) -> np.ndarray:
        out = np.atleast_2d(np.asarray(self.fn(points), dtype=np.float64))
        if out.shape[0] != points.shape[0]:
            raise ValueError("map must return one output per input point")
        return out

    def conditional(self, points):
        out = self.apply(points)
        return out, sparse.identity(points.shape[0], format="csr")

    def sample(self, points, rng):
        return self.apply(points)

    def to_dict(self):
        if self.name is None:
            raise ValueError("anonymous deterministic maps cannot serialize")
        return {"type": "map", "name": self.name, "params": _plain(self.params)}


@dataclass(frozen=True)
class NearestLookup:
    """Maps a point to its nearest anchor (ties -> lowest anchor index)."""

    anchors: np.ndarray

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        if anchors.shape[0] == 0:
            raise ValueError("anchor set must be nonempty")
        object.__setattr__(self, "anchors", anchors)

    is_stochastic = False
    is_deterministic = True

    def indices(self, points: np.ndarray) -> np.ndarray:
        out = np.empty(points.shape[0], dtype=np.int64)
        k, d = self.anchors.shape
        chunk = max(1, int(2**21 / max(1, k * d)))
        for i in range(0, points.shape[0], chunk):
            d2 = ((points[i : i + chunk, None, :] - self.anchors[None, :, :]) ** 2).sum(axis=2)
            out[i : i + chunk] = np.argmin(d2, axis=1)
        return out

    def apply(self, points):
        return self.anchors[self.indices(points)]

    def conditional(self, points):
        idx = self.indices(points)
        n = points.shape[0]
        rows = sparse.csr_matrix(
            (np.ones(n), (np.arange(n), idx)), shape=(n, self.anchors.shape[0])
        )
        return self.anchors, rows

    def sample(self, points, rng):
        return self.apply(points)

    def to_dict(self):
        return {"type": "nearest_lookup", "anchors": self.anchors.tolist()}


@dataclass(frozen=True)
class GaussianConvolution:
    """x -> N(x, sigma^2 I); the only continuous (Monte Carlo) stage."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    is_stochastic = True
    is_deterministic = False

    def conditional(self, points):
        raise ValueError("Gaussian stages have no finite conditional support")

    def sample(self, points, rng):
        return points + self.sigma * rng.standard_normal(points.shape)

    def to_dict(self):
        return {"type": "gaussian", "sigma": self.sigma}


def _lookup_rows(source_points: np.ndarray):
    return {pt.tobytes(): i for i, pt in enumerate(np.ascontiguousarray(source_points))}


@dataclass(frozen=True)
class DiscreteKernelStage:
    """Applies a finite kernel; inputs must hit its source support exactly."""

    kernel: DiscreteKernel

    is_stochastic = False

    @property
    def is_deterministic(self) -> bool:
        rows = self.kernel.rows
        counts = np.diff(rows.indptr)
        return bool(np.all(counts == 1)) and bool(np.allclose(rows.data, 1.0))

    def _indices(self, points):
        table = _lookup_rows(self.kernel.source_points)
        pts = np.ascontiguousarray(np.atleast_2d(points))
        idx = np.empty(pts.shape[0], dtype=np.int64)
        for k, pt in enumerate(pts):
            key = pt.tobytes()
            if key not in table:
                raise ValueError(
                    "point is outside the discrete kernel's source support"
                )
            idx[k] = table[key]
        return idx

    def conditional(self, points):
        idx = self._indices(points)
        return self.kernel.target_points, self.kernel.rows[idx]

    def sample(self, points, rng):
        idx = self._indices(points)
        rows = self.kernel.rows
        u = rng.random(points.shape[0])
        chosen = np.empty(points.shape[0], dtype=np.int64)
        # group draws by source row so each row's inverse CDF is vectorized
        for i in np.unique(idx):
            where = np.flatnonzero(idx == i)
            start, end = rows.indptr[i], rows.indptr[i + 1]
            cols = rows.indices[start:end]
            probs = rows.data[start:end]
            if cols.size == 1:
                chosen[where] = cols[0]
            else:
                cum = np.cumsum(probs)
                cum[-1] = max(cum[-1], 1.0)
                chosen[where] = cols[np.searchsorted(cum, u[where], side="right")]
        return self.kernel.target_points[chosen]

    def to_dict(self):
        return {"type": "discrete_kernel", "kernel": _kernel_payload(self.kernel)}


@dataclass(frozen=True)
class RoundToPartition:
    """Deterministic rounding of a point to its partition cell center."""

    partition: object

    is_stochastic = False
    is_deterministic = True

    def apply(self, points):
        return self.partition.round_points(points)

    def conditional(self, points):
        return self.apply(points), sparse.identity(points.shape[0], format="csr")

    def sample(self, points, rng):
        return self.apply(points)

    def to_dict(self):
        return {"type": "round_partition", "partition": self.partition.to_dict()}


@dataclass(frozen=True)
class SoftmaxKernelStage:
    """Entropic conditional kernel extended to every x in R^d.

    Row weights at x are proportional to exp((g_j - ||x - y_j||^p)/tau)
    times the target atom weights; on the training support this matches
    the solver's conditional rows.
    """

    target_points: np.ndarray
    g: np.ndarray
    tau: float
    p: float
    log_weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target_points", np.atleast_2d(np.asarray(self.target_points, dtype=np.float64)))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=np.float64))
        object.__setattr__(self, "log_weights", np.asarray(self.log_weights, dtype=np.float64))
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    is_stochastic = False
    is_deterministic = False

    def row_weights(self, points: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(
            np.atleast_2d(points)[:, None, :] - self.target_points[None, :, :], axis=2
        )
        logits = (self.g[None, :] - (d if self.p == 1 else d**self.p)) / self.tau
        logits = logits + self.log_weights[None, :]
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        return w / w.sum(axis=1, keepdims=True)

    def conditional(self, points):
        return self.target_points, sparse.csr_matrix(self.row_weights(points))

    def sample(self, points, rng):
        w = self.row_weights(points)
        cum = np.cumsum(w, axis=1)
        u = rng.random(points.shape[0])
        idx = (cum < u[:, None]).sum(axis=1)
        return self.target_points[np.minimum(idx, w.shape[1] - 1)]

    def to_dict(self):
        return {
            "type": "softmax_kernel",
            "target": self.target_points.tolist(),
            "g": self.g.tolist(),
            "tau": self.tau,
            "p": self.p,
            "log_weights": self.log_weights.tolist(),
        }


@dataclass(frozen=True)
class Cdf1dKernelStage:
    """One-dimensional CDF coupling kernel, defined on all of R.

    An input x with source-CDF jump (p1, p2] spreads over the target
    quantile range for (p1, p2], proportionally to the overlapped target
    mass; a non-atom x maps to the target quantile at its CDF value.
    """

    source_values: np.ndarray
    source_weights: np.ndarray
    target_values: np.ndarray
    target_weights: np.ndarray

    def __post_init__(self):
        sv = np.asarray(self.source_values, dtype=np.float64).ravel()
        sw = np.asarray(self.source_weights, dtype=np.float64).ravel()
        tv = np.asarray(self.target_values, dtype=np.float64).ravel()
        tw = np.asarray(self.target_weights, dtype=np.float64).ravel()
        o = np.argsort(sv, kind="stable")
        sv, sw = sv[o], sw[o]
        o = np.argsort(tv, kind="stable")
        tv, tw = tv[o], tw[o]
        scum = np.concatenate([[0.0], np.cumsum(sw)])
        scum[-1] = 1.0
        tcum = np.concatenate([[0.0], np.cumsum(tw)])
        tcum[-1] = 1.0
        object.__setattr__(self, "source_values", sv)
        object.__setattr__(self, "source_weights", sw)
        object.__setattr__(self, "target_values", tv)
        object.__setattr__(self, "target_weights", tw)
        object.__setattr__(self, "_scum", scum)
        object.__setattr__(self, "_tcum", tcum)

    is_stochastic = False
    is_deterministic = False

    @property
    def target_points(self) -> np.ndarray:
        return self.target_values.reshape(-1, 1)

    def _interval(self, x: float) -> tuple[float, float]:
        # (F(x-), F(x)] of the source CDF; equal entries for non-atoms
        lo = float(self._scum[np.searchsorted(self.source_values, x, side="left")])
        hi = float(self._scum[np.searchsorted(self.source_values, x, side="right")])
        return lo, hi

    def row_weights(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)[:, 0]
        tcum = self._tcum
        out = np.zeros((pts.shape[0], self.target_values.shape[0]))
        for k, x in enumerate(pts):
            p1, p2 = self._interval(float(x))
            if p2 > p1:
                overlap = np.minimum(tcum[1:], p2) - np.maximum(tcum[:-1], p1)
                row = np.clip(overlap, 0.0, None)
            else:
                u = min(max(p1, 0.0), 1.0)
                j = int(np.searchsorted(tcum[1:], u, side="left"))
                j = min(j, self.target_values.shape[0] - 1)
                row = np.zeros(self.target_values.shape[0])
                row[j] = 1.0
            s = row.sum()
            out[k] = row / s if s > 0 else row
        return out

    def conditional(self, points):
        return self.target_points, sparse.csr_matrix(self.row_weights(points))

    def sample(self, points, rng):
        w = self.row_weights(points)
        cum = np.cumsum(w, axis=1)
        u = rng.random(points.shape[0])
        idx = (cum < u[:, None]).sum(axis=1)
        return self.target_points[np.minimum(idx, w.shape[1] - 1)]

    def to_dict(self):
        return {
            "type": "cdf_1d",
            "source_values": self.source_values.tolist(),
            "source_weights": self.source_weights.tolist(),
            "target_values": self.target_values.tolist(),
            "target_weights": self.target_weights.tolist(),
        }


# -- pipeline -----------------------------------------------------------------


@dataclass(frozen=True)
class KernelPipeline:
    """Ordered stages applied left to right; immutable and shareable."""

    stages: tuple
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def is_stochastic_continuous(self) -> bool:
        return any(s.is_stochastic for s in self.stages)

    @property
    def is_deterministic(self) -> bool:
        return all(s.is_deterministic for s in self.stages)


def identity_pipeline() -> KernelPipeline:
    return KernelPipeline((DeterministicMap.named("identity"),))


def constant_pipeline(point) -> KernelPipeline:
    point = np.asarray(point, dtype=np.float64).ravel()
    return KernelPipeline((DeterministicMap.named("constant", point=point.tolist()),))


def compose(outer: KernelPipeline, inner: KernelPipeline) -> KernelPipeline:
    """Composite kernel: apply ``inner`` first, then ``outer``."""
    return KernelPipeline(inner.stages + outer.stages)


def _as_pipeline(k) -> KernelPipeline:
    if isinstance(k, KernelPipeline):
        return k
    if isinstance(k, DiscreteKernel):
        return KernelPipeline((DiscreteKernelStage(k),))
    raise TypeError(f"expected KernelPipeline or DiscreteKernel, got {type(k)!r}")


def conditional_matrix(k, points: np.ndarray) -> tuple[np.ndarray, sparse.csr_matrix]:
    """Exact conditional distributions of the pipeline at finitely many points.

    Returns (support, rows): rows[i] is the distribution of the output
    given input ``points[i]``, over the rows of ``support``.  Requires a
    pipeline without continuous stochastic stages.
    """
    pipe = _as_pipeline(k)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cond = sparse.identity(pts.shape[0], format="csr")
    current = pts
    for stage in pipe.stages:
        current, rows = stage.conditional(current)
        cond = cond @ rows
    return current, sparse.csr_matrix(cond)


def pushforward(
    k, mu: DiscreteMeasure, mc: MonteCarloConfig | None = None
) -> DiscreteMeasure:
    """Distribution of the pipeline output under input distribution ``mu``.

    Exact mixture for pipelines with finite reachable sets; Monte Carlo
    empirical measure of ``mc.samples`` draws when a continuous stochastic
    stage is present (then ``mc`` is required).
    """
    pipe = _as_pipeline(k)
    if not pipe.is_stochastic_continuous:
        support, cond = conditional_matrix(pipe, mu.points)
        weights = np.asarray(cond.T @ mu.weights).ravel()
        return make_discrete(support, weights)
    if mc is None:
        raise ValueError("Monte Carlo config required for Gaussian stages")
    rng = np.random.default_rng(mc.seed)
    draws = mu.points[rng.choice(mu.n, size=mc.samples, replace=True, p=mu.weights)]
    for stage in pipe.stages:
        draws = stage.sample(draws, rng)
    return empirical(draws)


def transport_cost(
    k, mu: DiscreteMeasure, p: float, mc: MonteCarloConfig | None = None
) -> float:
    """L^p transport cost (integral of ||x - y||^p, rooted) of the kernel."""
    pipe = _as_pipeline(k)
    if not pipe.is_stochastic_continuous:
        support, cond = conditional_matrix(pipe, mu.points)
        cost = _powered_cross_cost(mu.points, support, cond, p)
        return float((mu.weights * cost).sum() ** (1.0 / p))
    if mc is None:
        raise ValueError("Monte Carlo config required for Gaussian stages")
    rng = np.random.default_rng(mc.seed)
    xs = mu.points[rng.choice(mu.n, size=mc.samples, replace=True, p=mu.weights)]
    ys = xs
    for stage in pipe.stages:
        ys = stage.sample(ys, rng)
    pow_cost = np.linalg.norm(xs - ys, axis=1) ** p
    return float(pow_cost.mean() ** (1.0 / p))


def _powered_cross_cost(X, support, cond: sparse.csr_matrix, p: float) -> np.ndarray:
    """Row vector of integral ||x_i - y||^p d cond_i(y)."""
    out = np.empty(X.shape[0])
    coo = cond.tocoo()
    d = np.linalg.norm(X[coo.row] - support[coo.col], axis=1)
    vals = coo.data * (d if p == 1 else d**p)
    out[:] = 0.0
    np.add.at(out, coo.row, vals)
    return out


def evaluate_at(k, x, rng: np.random.Generator) -> np.ndarray:
    """One draw from the pipeline's conditional distribution at ``x``."""
    pipe = _as_pipeline(k)
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for stage in pipe.stages:
        pts = stage.sample(pts, rng)
    return pts[0]


def map_apply(k, points: np.ndarray) -> np.ndarray:
    """Evaluate a deterministic pipeline as a plain map on a batch."""
    pipe = _as_pipeline(k)
    if not pipe.is_deterministic:
        raise ValueError("pipeline contains a stochastic stage")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rng = np.random.default_rng(0)  # never consulted by deterministic stages
    for stage in pipe.stages:
        pts = stage.sample(pts, rng)
    return pts


# -- serialization -------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _kernel_payload(k: DiscreteKernel) -> dict:
    rows = []
    csr = k.rows
    for i in range(k.n_source):
        start, end = csr.indptr[i], csr.indptr[i + 1]
        rows.append([[int(j), float(v)] for j, v in zip(csr.indices[start:end], csr.data[start:end])])
    return {
        "source": k.source_points.tolist(),
        "target": k.target_points.tolist(),
        "rows": rows,
    }


def _kernel_from_payload(payload: dict) -> DiscreteKernel:
    source = np.atleast_2d(np.asarray(payload["source"], dtype=np.float64))
    target = np.atleast_2d(np.asarray(payload["target"], dtype=np.float64))
    n, m = source.shape[0], target.shape[0]
    data, indices, indptr = [], [], [0]
    for row in payload["rows"]:
        for j, v in row:
            indices.append(int(j))
            data.append(float(v))
        indptr.append(len(data))
    rows = sparse.csr_matrix((data, indices, indptr), shape=(n, m))
    return DiscreteKernel(source, target, rows)


def kernel_to_json(k: DiscreteKernel) -> str:
    return json.dumps(_kernel_payload(k))


def kernel_from_json(text: str) -> DiscreteKernel:
    return _kernel_from_payload(json.loads(text))


def _stage_from_dict(payload: dict):
    tag = payload.get("type")
    if tag == "map":
        return DeterministicMap.named(payload["name"], **payload.get("params", {}))
    if tag == "nearest_lookup":
        return NearestLookup(np.asarray(payload["anchors"], dtype=np.float64))
    if tag == "gaussian":
        return GaussianConvolution(float(payload["sigma"]))
    if tag == "discrete_kernel":
        return DiscreteKernelStage(_kernel_from_payload(payload["kernel"]))
    if tag == "round_partition":
        return RoundToPartition(partition_from_dict(payload["partition"]))
    if tag == "softmax_kernel":
        return SoftmaxKernelStage(
            np.asarray(payload["target"], dtype=np.float64),
            np.asarray(payload["g"], dtype=np.float64),
            float(payload["tau"]),
            float(payload["p"]),
            np.asarray(payload["log_weights"], dtype=np.float64),
        )
    if tag == "cdf_1d":
        return Cdf1dKernelStage(
            np.asarray(payload["source_values"]),
            np.asarray(payload["source_weights"]),
            np.asarray(payload["target_values"]),
            np.asarray(payload["target_weights"]),
        )
    raise ValueError(f"unknown stage type {tag!r}")


def pipeline_to_json(pipe: KernelPipeline) -> str:
    return json.dumps({"stages": [s.to_dict() for s in pipe.stages], "info": _plain(pipe.info)})


def pipeline_from_json(text: str) -> KernelPipeline:
    payload = json.loads(text) if isinstance(text, str) else json.loads(Path(text).read_text())
    stages = tuple(_stage_from_dict(s) for s in payload["stages"])
    return KernelPipeline(stages, info=payload.get("info", {}))
