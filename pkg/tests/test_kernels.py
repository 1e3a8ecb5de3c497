"""Tests for kernel pipelines and their evaluation paths."""

import numpy as np
import pytest
from scipy import sparse

from helpers_ot import extended, random_kernel
from stochot.kernels import (
    Cdf1dKernelStage,
    DeterministicMap,
    DiscreteKernel,
    DiscreteKernelStage,
    GaussianConvolution,
    KernelPipeline,
    MonteCarloConfig,
    NearestLookup,
    RoundToPartition,
    compose,
    conditional_matrix,
    constant_pipeline,
    evaluate_at,
    identity_pipeline,
    kernel_from_json,
    kernel_from_plan,
    kernel_to_json,
    map_apply,
    pipeline_from_json,
    pipeline_to_json,
    pushforward,
    transport_cost,
)
from stochot.measures import dirac, empirical, make_discrete
from stochot.ot_core import exact_ot
from stochot.partitions import CubicPartition


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestKernelFromPlan:
    def test_identity_plan_gives_identity_kernel(self, rng):
        m = empirical(rng.random((5, 2)))
        k = kernel_from_plan(exact_ot(m, m, 2.0))
        dense = np.asarray(k.rows.todense())
        assert np.abs(dense - np.eye(5)).max() < 1e-12

    def test_product_plan_gives_constant_rows(self, rng):
        mu = make_discrete(rng.random((4, 1)), rng.dirichlet(np.ones(4)))
        nu = make_discrete(rng.random((3, 1)), rng.dirichlet(np.ones(3)))
        from stochot.ot_core import round_plan_to_feasible

        plan = round_plan_to_feasible(np.outer(mu.weights, nu.weights), mu, nu, 1.0)
        k = kernel_from_plan(plan)
        dense = np.asarray(k.rows.todense())
        assert np.abs(dense - nu.weights[None, :]).max() < 1e-12

    def test_generic_uniform_plan_is_permutation(self, rng):
        mu = empirical(rng.normal(size=(3, 2)))
        nu = empirical(rng.normal(size=(3, 2)))
        k = kernel_from_plan(exact_ot(mu, nu, 2.0))
        dense = np.asarray(k.rows.todense())
        assert np.all((dense > 1 - 1e-12) | (dense < 1e-12))
        assert np.allclose(dense.sum(axis=0), 1.0)

    def test_reintegration_reproduces_plan(self, rng):
        mu = make_discrete(rng.random((6, 2)), rng.dirichlet(np.ones(6)))
        nu = make_discrete(rng.random((4, 2)), rng.dirichlet(np.ones(4)))
        plan = exact_ot(mu, nu, 1.0)
        k = kernel_from_plan(plan)
        recon = np.asarray(k.rows.todense()) * mu.weights[:, None]
        assert np.abs(recon - plan.to_dense()).max() < 1e-12

    def test_zero_weight_row_flagged_uniform(self):
        mu = make_discrete([(0.0,), (1.0,)], [1.0, 0.0])
        nu = dirac([2.0])
        plan = exact_ot(mu, nu, 1.0)
        k = kernel_from_plan(plan)
        assert k.uniform_fill.tolist() == [False, True]
        assert np.asarray(k.rows.todense())[1, 0] == 1.0

    def test_row_stochastic_validation(self):
        with pytest.raises(ValueError, match="sum to one"):
            DiscreteKernel(np.zeros((1, 1)), np.zeros((2, 1)), sparse.csr_matrix(np.array([[0.5, 0.4]])))


class TestPushforward:
    def test_identity(self, rng):
        m = empirical(rng.random((5, 2)))
        out = pushforward(identity_pipeline(), m)
        assert np.abs(out.points - m.points).max() == 0.0
        assert np.abs(out.weights - m.weights).max() == 0.0

    def test_constant_rows_give_target(self, rng):
        mu = make_discrete(rng.random((4, 1)), rng.dirichlet(np.ones(4)))
        nu_w = rng.dirichlet(np.ones(3))
        rows = sparse.csr_matrix(np.tile(nu_w, (4, 1)))
        k = DiscreteKernel(mu.points, rng.random((3, 1)), rows)
        out = pushforward(KernelPipeline((DiscreteKernelStage(k),)), mu)
        assert np.abs(out.weights - nu_w).max() < 1e-12

    def test_composition_consistency(self, rng):
        mu = empirical(rng.random((5, 2)))
        mid = rng.random((4, 2))
        tgt = rng.random((3, 2))
        lam = random_kernel(rng, mu.points, mid, "dirichlet")
        kap = random_kernel(rng, mid, tgt, "dirichlet")
        combined = compose(kap, lam)
        lhs = pushforward(combined, mu)
        rhs = pushforward(kap, pushforward(lam, mu))
        # identical target support in identical order
        assert np.abs(lhs.points - rhs.points).max() == 0.0
        assert np.abs(lhs.weights - rhs.weights).max() < 1e-12

    def test_mass_exactly_one(self, rng):
        mu = make_discrete(rng.random((6, 2)), rng.dirichlet(np.ones(6)))
        k = random_kernel(rng, mu.points, rng.random((5, 2)), "dirichlet")
        out = pushforward(k, mu)
        assert out.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_monte_carlo_deterministic_given_seed(self, rng):
        mu = empirical(rng.random((4, 2)))
        pipe = KernelPipeline((GaussianConvolution(0.2),))
        mc = MonteCarloConfig(samples=500, seed=7)
        a = pushforward(pipe, mu, mc)
        b = pushforward(pipe, mu, mc)
        assert np.array_equal(a.points, b.points)

    def test_monte_carlo_requires_config(self, rng):
        mu = empirical(rng.random((4, 2)))
        pipe = KernelPipeline((GaussianConvolution(0.2),))
        with pytest.raises(ValueError, match="Monte Carlo"):
            pushforward(pipe, mu)


class TestCompose:
    def test_identity_left_right(self, rng):
        mu = empirical(rng.random((5, 2)))
        k = random_kernel(rng, mu.points, rng.random((4, 2)), "dirichlet")
        for combined in (compose(k, identity_pipeline()),):
            out = pushforward(combined, mu)
            ref = pushforward(k, mu)
            assert np.abs(out.weights - ref.weights).max() < 1e-12
        # outer identity keeps the same distribution over mapped points
        combined = compose(identity_pipeline(), k)
        out = pushforward(combined, mu)
        ref = pushforward(k, mu)
        assert np.abs(out.weights - ref.weights).max() < 1e-12


class TestTransportCost:
    def test_identity_zero(self, rng):
        m = empirical(rng.random((5, 2)))
        assert transport_cost(identity_pipeline(), m, 2.0) == 0.0

    def test_dirac_to_dirac(self):
        mu = dirac([0.0, 0.0])
        pipe = constant_pipeline([3.0, 4.0])
        assert transport_cost(pipe, mu, 1.0) == pytest.approx(5.0)
        assert transport_cost(pipe, mu, 2.0) == pytest.approx(5.0)

    def test_optimal_kernel_matches_wasserstein(self, rng):
        from stochot.ot_core import wasserstein_p

        for _ in range(10):
            mu = empirical(rng.random((6, 2)))
            nu = empirical(rng.random((5, 2)))
            p = float(rng.choice([1.0, 2.0]))
            k = kernel_from_plan(exact_ot(mu, nu, p))
            tc = transport_cost(KernelPipeline((DiscreteKernelStage(k),)), mu, p)
            assert tc == pytest.approx(wasserstein_p(mu, nu, p), abs=1e-9)


class TestEvaluateAt:
    def test_identity(self, rng):
        x = np.array([0.3, 0.7])
        assert np.array_equal(evaluate_at(identity_pipeline(), x, rng), x)

    def test_one_hot_kernel_seed_independent(self, rng):
        pts = rng.random((3, 2))
        imgs = rng.random((3, 2))
        rows = sparse.csr_matrix(np.eye(3))
        pipe = extended(DiscreteKernel(pts, imgs, rows))
        outs = {tuple(evaluate_at(pipe, pts[1], np.random.default_rng(s))) for s in range(5)}
        assert len(outs) == 1
        assert np.allclose(next(iter(outs)), imgs[1])

    def test_nearest_lookup_tie_and_nearest(self):
        pipe = KernelPipeline((NearestLookup(np.array([[-1.0], [1.0]])),))
        assert evaluate_at(pipe, np.array([0.2]), np.random.default_rng(0))[0] == 1.0
        # exact tie goes to the lowest index
        assert evaluate_at(pipe, np.array([0.0]), np.random.default_rng(0))[0] == -1.0

    def test_outside_kernel_domain_raises(self, rng):
        pts = rng.random((3, 2))
        k = DiscreteKernel(pts, pts, sparse.csr_matrix(np.eye(3)))
        pipe = KernelPipeline((DiscreteKernelStage(k),))
        with pytest.raises(ValueError, match="source support"):
            evaluate_at(pipe, np.array([9.9, 9.9]), rng)


class TestMapApply:
    def test_deterministic_pipeline(self, rng):
        pts = rng.random((4, 2))
        pipe = KernelPipeline(
            (DeterministicMap.named("affine", matrix=np.eye(2).tolist(), offset=[1.0, 0.0]),)
        )
        out = map_apply(pipe, pts)
        assert np.allclose(out, pts + [1.0, 0.0])

    def test_stochastic_rejected(self):
        pipe = KernelPipeline((GaussianConvolution(1.0),))
        with pytest.raises(ValueError, match="stochastic"):
            map_apply(pipe, np.zeros((1, 1)))


class TestSerialization:
    def test_kernel_json_roundtrip(self, rng):
        mu = empirical(rng.random((4, 2)))
        nu = empirical(rng.random((3, 2)))
        k = kernel_from_plan(exact_ot(mu, nu, 1.0))
        back = kernel_from_json(kernel_to_json(k))
        assert np.abs(np.asarray((back.rows - k.rows).todense())).max() < 1e-15

    def test_pipeline_roundtrip_all_stage_kinds(self, rng):
        mu = empirical(rng.random((4, 2)))
        nu = empirical(rng.random((3, 2)))
        k = kernel_from_plan(exact_ot(mu, nu, 1.0))
        pipe = KernelPipeline(
            (
                RoundToPartition(CubicPartition(0.25, np.zeros(2))),
                NearestLookup(mu.points),
                DiscreteKernelStage(k),
            ),
            info={"estimator": "test"},
        )
        back = pipeline_from_json(pipeline_to_json(pipe))
        x = rng.random(2)
        a = pushforward(back, mu)
        b = pushforward(pipe, mu)
        assert np.abs(a.weights - b.weights).max() < 1e-15
        assert back.info["estimator"] == "test"
        assert np.allclose(
            evaluate_at(back, x, np.random.default_rng(3)),
            evaluate_at(pipe, x, np.random.default_rng(3)),
        )

    def test_gaussian_softmax_cdf_roundtrip(self, rng):
        ys = rng.random((4, 1))
        stages = (
            GaussianConvolution(0.3),
            Cdf1dKernelStage(rng.random(5), np.full(5, 0.2), ys[:, 0], np.full(4, 0.25)),
        )
        pipe = KernelPipeline(stages)
        back = pipeline_from_json(pipeline_to_json(pipe))
        assert isinstance(back.stages[0], GaussianConvolution)
        assert back.stages[0].sigma == 0.3

    def test_anonymous_map_rejected(self):
        pipe = KernelPipeline((DeterministicMap(lambda X: X),))
        with pytest.raises(ValueError, match="anonymous"):
            pipeline_to_json(pipe)


class TestConditionalMatrix:
    def test_rows_normalize(self, rng):
        mu = empirical(rng.random((5, 2)))
        k = random_kernel(rng, mu.points, rng.random((6, 2)), "dirichlet")
        _, cond = conditional_matrix(k, mu.points)
        sums = np.asarray(cond.sum(axis=1)).ravel()
        assert np.abs(sums - 1.0).max() < 1e-12
