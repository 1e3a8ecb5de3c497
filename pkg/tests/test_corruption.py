"""Tests for adversarial corruption and the robust distance."""

import numpy as np
import pytest

from stochot.corruption import (
    Composite,
    CorruptionBudget,
    DirectedShift,
    RandomRelocate,
    corrupt,
    lb_instance_tv,
    lb_instance_wp,
    robust_wp,
    two_point_kernel_grid,
)
from stochot.error_metric import transportation_error
from stochot.measures import dirac, empirical, make_discrete, tv_distance
from stochot.ot_core import wasserstein_p


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestCorrupt:
    def test_zero_budget_identity(self, rng):
        pts = rng.random((40, 2))
        out = corrupt(pts, CorruptionBudget(0.0, 0.0), Composite(), rng)
        assert np.array_equal(out, pts)

    def test_directed_shift_moves_exactly_rho(self, rng):
        pts = rng.random((30, 3))
        budget = CorruptionBudget(0.0, 0.07, p=1.0)
        out = corrupt(pts, budget, DirectedShift(), rng)
        moves = np.linalg.norm(out - pts, axis=1)
        assert np.abs(moves - 0.07).max() < 1e-12
        assert wasserstein_p(empirical(pts), empirical(out), 1.0) == pytest.approx(0.07, abs=1e-9)

    def test_relocate_count(self, rng):
        pts = rng.random((100, 2))
        out = corrupt(pts, CorruptionBudget(0.1, 0.0), RandomRelocate(), rng)
        assert (np.linalg.norm(out - pts, axis=1) > 1e-9).sum() == 10

    def test_relocate_warns_below_one_point(self, rng):
        pts = rng.random((5, 2))
        with pytest.warns(UserWarning, match="no points relocated"):
            out = corrupt(pts, CorruptionBudget(0.1, 0.0), RandomRelocate(), rng)
        assert np.array_equal(out, pts)

    def test_composite_satisfies_both_budgets(self, rng):
        pts = rng.random((60, 2))
        budget = CorruptionBudget(0.15, 0.05, p=2.0)
        out = corrupt(pts, budget, Composite(), rng)
        moved = np.linalg.norm(out - pts, axis=1)
        relocated = moved > 1.0  # outlier shell is far away
        assert relocated.sum() == int(0.15 * 60)
        kept_cost = (moved[~relocated] ** 2).sum() / 60
        assert kept_cost <= 0.05**2 + 1e-12

    def test_custom_shift_direction(self, rng):
        pts = np.zeros((4, 2))
        out = corrupt(pts, CorruptionBudget(0.0, 1.0), DirectedShift(direction=[0.0, 2.0]), rng)
        assert np.allclose(out, [[0.0, 1.0]] * 4)

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            CorruptionBudget(1.5, 0.0)
        with pytest.raises(ValueError):
            CorruptionBudget(0.1, -0.1)


class TestRobustWp:
    def test_eps_zero_equals_wp(self, rng):
        mu = empirical(rng.random((12, 2)))
        nu = empirical(rng.random((9, 2)))
        assert robust_wp(mu, nu, 0.0, 2.0) == pytest.approx(wasserstein_p(mu, nu, 2.0), abs=1e-9)

    def test_eps_one_is_zero(self, rng):
        mu = empirical(rng.random((5, 2)))
        nu = empirical(rng.random((5, 2)))
        assert robust_wp(mu, nu, 1.0, 1.0) == 0.0

    def test_trimming_removes_far_outlier(self):
        mu = make_discrete([[0.0], [100.0]], [0.9, 0.1])
        assert robust_wp(mu, dirac([0.0]), 0.1, 1.0) <= 1e-9

    def test_monotone_and_dominated(self, rng):
        mu = empirical(rng.random((15, 2)))
        nu = empirical(rng.random((11, 2)))
        w = wasserstein_p(mu, nu, 2.0)
        prev = w + 1e-12
        for eps in (0.0, 0.05, 0.1, 0.25, 0.5):
            v = robust_wp(mu, nu, eps, 2.0)
            assert v <= prev + 1e-12
            assert v <= w + 1e-12
            prev = v

    def test_symmetric_form_equivalence(self, rng):
        for _ in range(25):
            na, nb = int(rng.integers(1, 10)), int(rng.integers(1, 10))
            mu = make_discrete(rng.random((na, 2)), rng.dirichlet(np.ones(na)))
            nu = make_discrete(rng.random((nb, 2)), rng.dirichlet(np.ones(nb)))
            eps = float(rng.choice([0.05, 0.2, 0.4]))
            p = float(rng.choice([1.0, 2.0]))
            assert robust_wp(mu, nu, eps, p) == pytest.approx(
                robust_wp(nu, mu, eps, p), abs=1e-9
            )


class TestLowerBoundInstances:
    def test_tv_instance_structure(self):
        inst = lb_instance_tv(0.2, 3)
        assert tv_distance(inst.mu1, inst.mu2) == pytest.approx(0.2, abs=1e-12)
        for p in (1.0, 2.0):
            assert wasserstein_p(inst.mu2, inst.nu, p) == pytest.approx(
                0.2 ** (1 / p) * np.sqrt(3), rel=1e-9
            )
        assert np.array_equal(inst.observed.points, inst.nu.points)

    def test_tv_grid_property(self):
        for eps, d in ((0.1, 2), (0.3, 3)):
            inst = lb_instance_tv(eps, d)
            bound = 0.5 * eps * np.sqrt(d)  # p = 1
            worst = min(
                transportation_error(k, inst.mu1, inst.nu, 1.0).ep
                + transportation_error(k, inst.mu2, inst.nu, 1.0).ep
                for _, _, k in two_point_kernel_grid(inst.nu.points, inst.nu.points, steps=11)
            )
            assert worst >= bound - 1e-9

    def test_wp_instance_structure(self):
        for p in (1.0, 2.0):
            inst = lb_instance_wp(0.08, 3, p)
            assert inst.mu0.weights.tolist() == [0.5, 0.5]
            assert wasserstein_p(inst.mu0, inst.mut, p) <= inst.rho + 1e-12
            assert inst.c == pytest.approx(inst.t ** (1 / p))

    def test_wp_grid_property(self):
        for p in (1.0, 2.0):
            inst = lb_instance_wp(0.1, 2, p)
            bound = np.sqrt(2) * min(inst.c, inst.t ** (1 / p)) / 2
            worst = min(
                transportation_error(k, inst.mut, inst.nu, p).ep
                + transportation_error(k, inst.mu0, inst.nu, p).ep
                for _, _, k in two_point_kernel_grid(inst.mu0.points, inst.nu.points, steps=11)
            )
            assert worst >= bound - 1e-9

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            lb_instance_tv(0.0, 2)
        with pytest.raises(ValueError):
            lb_instance_wp(0.0, 2, 1.0)
