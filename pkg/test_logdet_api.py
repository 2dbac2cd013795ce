import math

import numpy as np
import pytest

from sddlogdet.config.environments import config
from sddlogdet.core.errors import NotPositiveDefinite
from sddlogdet.core.sparse import SymmetricSparse, laplacian_of
from sddlogdet.services.direct_solvers import dense_logdet
from sddlogdet.services.generators import generate
from sddlogdet.services.logdet_api import (
    bounds_report,
    dense_logdet_report,
    estimate,
    fast_inexact_logdet,
    logdet_bounds,
    tree_logdet,
    ultra_logdet,
)
from sddlogdet.services.sparsifiers import chain_length_cap


def _truth(A: SymmetricSparse) -> float:
    return dense_logdet(A) / A.n


def test_scaled_identity_is_exact():
    A = SymmetricSparse.identity(6, 2.0)
    report = tree_logdet(A, eps=0.1, eta=0.1, seed=0)
    assert math.isclose(report.estimate, math.log(2.0), rel_tol=1e-12)
    assert report.samples == 0
    lower, upper = logdet_bounds(A, seed=0)
    assert math.isclose(lower, math.log(2.0), rel_tol=1e-12)
    assert math.isclose(upper, math.log(2.0), rel_tol=1e-12)


def test_two_by_two_all_methods():
    A = SymmetricSparse.from_dense(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    truth = math.log(3.0) / 2.0
    assert abs(tree_logdet(A, eps=0.1, seed=1).estimate - truth) <= 0.1
    assert abs(ultra_logdet(A, eps=0.1, seed=1).estimate - truth) <= 1e-12
    assert abs(fast_inexact_logdet(A, seed=1).estimate - truth) <= 0.5


def test_positive_offdiagonal_bounds_bracket():
    A = SymmetricSparse.from_dense(np.array([[2.0, 1.0], [1.0, 2.0]]))
    lower, upper = logdet_bounds(A, seed=0)
    assert lower <= math.log(3.0) / 2.0 <= upper


def test_bounds_bracket_dense(rng, helpers):
    for case in range(30):
        n = int(rng.integers(3, 40))
        A = helpers.random_sdd(rng, n, density=float(rng.uniform(0.05, 0.4)))
        report = bounds_report(A, seed=case)
        truth = _truth(A)
        slack = 1e-9 * max(1.0, abs(truth))
        assert report.lower - slack <= truth <= report.upper + slack
        assert report.method == "bounds"
        assert report.lower <= report.estimate <= report.upper


def test_tree_within_eps(rng, helpers):
    A = helpers.random_sdd(rng, 10, density=0.4)
    report = tree_logdet(A, eps=0.5, eta=0.1, seed=3)
    assert abs(report.estimate - _truth(A)) <= 0.5
    assert report.lower <= report.estimate <= report.upper
    assert report.n == 10 and report.method == "tree"


def test_tree_reports_plans_on_grid(helpers):
    A = helpers.grid_plus_shift(3, 3, 1.0)
    report = tree_logdet(A, eps=0.5, eta=0.2, seed=0)
    planned = [level for level in report.levels if level.plan is not None]
    assert planned
    for level in planned:
        assert level.plan.p >= 1 and level.plan.l >= 1
        assert level.kappa >= 1.0
        assert level.certification == "dense"
    assert report.samples == sum(level.plan.p for level in planned)
    assert abs(report.estimate - _truth(A)) <= 0.5


def test_thread_count_does_not_change_estimate(helpers):
    A = helpers.grid_plus_shift(3, 3, 1.0)
    one = tree_logdet(A, eps=0.5, eta=0.2, seed=7, threads=1)
    three = tree_logdet(A, eps=0.5, eta=0.2, seed=7, threads=3)
    assert one.estimate == three.estimate


def test_seed_is_reproducible(helpers):
    A = helpers.grid_plus_shift(3, 3, 0.5)
    first = tree_logdet(A, eps=0.5, eta=0.2, seed=11)
    second = tree_logdet(A, eps=0.5, eta=0.2, seed=11)
    assert first.estimate == second.estimate


def test_ultra_small_input_is_dense(rng, helpers):
    A = helpers.random_sdd(rng, 30)
    report = ultra_logdet(A, eps=0.1, seed=0)
    assert report.method == "ultra"
    assert math.isclose(report.estimate, _truth(A), rel_tol=1e-10)
    assert report.eps == 0.1


def test_ultra_with_chain(rng, helpers):
    A = helpers.random_sdd(rng, 12, density=0.4)
    report = ultra_logdet(A, eps=0.5, eta=0.2, seed=2, dense_threshold=8)
    assert abs(report.estimate - _truth(A)) <= 0.5
    assert report.method == "ultra"


def test_fast_within_half(rng, helpers):
    A = helpers.random_sdd(rng, 20, density=0.3)
    report = fast_inexact_logdet(A, seed=4)
    assert report.eps == 0.5
    assert abs(report.estimate - _truth(A)) <= 0.5


def test_singular_input_rejected(helpers):
    L = laplacian_of(helpers.path_graph(4))
    with pytest.raises(NotPositiveDefinite):
        tree_logdet(L)
    with pytest.raises(NotPositiveDefinite):
        logdet_bounds(L)
    with pytest.raises(NotPositiveDefinite):
        dense_logdet_report(L)


def test_compute_cap_reports_bounds_only(helpers):
    config.override("estimation.compute_cap", 0.0)
    config.override("estimation.pilot_cap", 0.0)
    A = helpers.grid_plus_shift(3, 3, 1.0)
    report = tree_logdet(A, eps=0.1, seed=0)
    assert report.degraded
    assert "compute-cap" in report.flags
    assert report.samples == 0
    assert report.lower <= _truth(A) + 1e-9 and _truth(A) <= report.upper + 1e-9


def test_dense_report_carries_bounds(rng, helpers):
    A = helpers.random_sdd(rng, 15)
    report = dense_logdet_report(A, seed=0)
    assert report.method == "dense"
    assert math.isclose(report.raw_logdet, dense_logdet(A))
    assert report.lower <= report.estimate <= report.upper


def test_dispatch(helpers):
    A = helpers.grid_plus_shift(2, 2, 1.0)
    assert estimate(A, method="bounds").method == "bounds"
    assert estimate(A, method="dense").method == "dense"
    with pytest.raises(ValueError):
        estimate(A, method="cholesky")  # type: ignore[arg-type]


def test_bounds_only_when_pilot_plans_are_off(helpers):
    config.override("estimation.compute_cap", 0.0)
    config.override("estimation.pilot_plans", False)
    report = tree_logdet(helpers.grid_plus_shift(3, 3, 1.0), eps=0.1, seed=0)
    assert "compute-cap" in report.flags and report.samples == 0


def test_pilot_plan_replaces_oversized_theorem_plan(helpers):
    config.override("estimation.compute_cap", 0.0)
    A = helpers.grid_plus_shift(4, 4, 1.0)
    report = tree_logdet(A, eps=0.3, eta=0.1, seed=5)
    assert "pilot-plan" in report.flags and "compute-cap" not in report.flags
    assert not report.degraded
    planned = [level for level in report.levels if level.plan is not None]
    assert planned and report.samples == sum(level.plan.p for level in planned)
    for level in planned:
        assert level.plan.mode == "pilot"
        assert level.plan.sample_std is not None and level.plan.theorem_p is not None
        assert level.plan.l <= level.plan.theorem_l
        assert level.plan.truncation_bias <= level.plan.eps / 2.0
    assert abs(report.estimate - _truth(A)) <= 0.3


def test_methods_agree(rng, helpers):
    config.override("estimation.compute_cap", 0.0)
    eps = 0.2
    for A in (helpers.grid_plus_shift(6, 6, 0.5), helpers.random_sdd(rng, 40, density=0.15)):
        truth = _truth(A)
        within = agree = 0
        for seed in range(10):
            tree = tree_logdet(A, eps=eps, eta=0.1, seed=seed)
            ultra = ultra_logdet(A, eps=eps, eta=0.1, seed=seed, dense_threshold=20)
            assert tree.samples > 0 and ultra.samples > 0
            within += abs(tree.estimate - truth) <= eps and abs(ultra.estimate - truth) <= eps
            agree += abs(tree.estimate - ultra.estimate) <= 2.0 * eps
        assert within >= 8 and agree >= 9


def test_shift_perturbation_is_first_order(rng, helpers):
    for _ in range(10):
        A = helpers.random_sdd(rng, int(rng.integers(5, 40)), density=0.3)
        norm_inv = 1.0 / float(np.linalg.eigvalsh(A.to_dense()).min())
        for shift in (1e-3, 1e-2):
            B = A + SymmetricSparse.identity(A.n, shift)
            change = abs(ultra_logdet(B, seed=0).estimate - ultra_logdet(A, seed=0).estimate)
            assert change <= shift * norm_inv + 10.0 * shift**2 * norm_inv**2


def _assert_sampled(report):
    assert report.samples > 0
    assert "compute-cap" not in report.flags


@pytest.mark.slow
class TestAcceptance:
    def test_tree_on_shifted_grid(self, helpers):
        A = helpers.grid_plus_shift(16, 16, 1.0)
        truth = _truth(A)
        hits = 0
        for seed in range(50):
            report = tree_logdet(A, eps=0.1, eta=0.1, seed=seed)
            _assert_sampled(report)
            hits += abs(report.estimate - truth) <= 0.1
        assert hits >= 45

    def test_ultra_on_shifted_grid(self, helpers):
        A = helpers.grid_plus_shift(32, 32, 0.1)
        truth = _truth(A)
        cap = chain_length_cap(2 * A.n)
        hits = 0
        for seed in range(50):
            report = ultra_logdet(A, eps=0.1, eta=0.1, seed=seed)
            _assert_sampled(report)
            assert "chain-stalled" not in report.flags
            assert max(level.level for level in report.levels) + 1 <= cap
            assert all(level.certification in ("exact", "dense", "probe") for level in report.levels)
            hits += abs(report.estimate - truth) <= 0.1
        assert hits >= 45

    def test_fast_on_shifted_grid(self, helpers):
        A = helpers.grid_plus_shift(20, 20, 1.0)
        truth = _truth(A)
        for seed in range(20):
            report = fast_inexact_logdet(A, seed=seed)
            _assert_sampled(report)
            assert abs(report.estimate - truth) <= 0.5

    def test_fast_on_regular_graph(self):
        A = generate("regular", (200, 4), shift=1.0, seed=3)
        report = fast_inexact_logdet(A, seed=42)
        _assert_sampled(report)
        assert abs(report.estimate - _truth(A)) <= 0.5

    def test_bounds_on_torus(self):
        A = generate("torus", (30, 30), shift=0.5, seed=0)
        lower, upper = logdet_bounds(A, seed=0)
        assert lower <= _truth(A) <= upper
