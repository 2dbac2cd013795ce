import math

import numpy as np
import pytest

from sddlogdet.core.errors import MaxIterationsExceeded, NotATree, NotPositiveDefinite
from sddlogdet.core.sparse import SymmetricSparse, WeightedGraph, laplacian_of
from sddlogdet.services.direct_solvers import (
    DenseCholesky,
    DirectSolver,
    dense_logdet,
    dense_pld,
    estimate_condition_number,
    greedy_eliminate,
    pcg_max_iterations,
    pcg_solve,
    pencil_extremes,
    tree_factorize,
    tree_multiply,
    tree_solve,
)
from sddlogdet.services.generators import grid_graph, random_tree, torus_graph


def _grounded(G: WeightedGraph) -> SymmetricSparse:
    return laplacian_of(G).delete_index(G.n - 1)


class TestDense:
    def test_identity(self):
        assert dense_logdet(SymmetricSparse.identity(7)) == 0.0

    def test_two_by_two(self):
        A = SymmetricSparse.from_dense(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        assert math.isclose(dense_logdet(A), math.log(3.0), rel_tol=1e-14)

    def test_factorial(self):
        A = SymmetricSparse.from_dense(np.diag(np.arange(1.0, 11.0)))
        assert math.isclose(dense_logdet(A), math.log(math.factorial(10)), rel_tol=1e-14)
        assert math.isclose(dense_logdet(A), 15.10441, abs_tol=1e-5)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            dense_logdet(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_solve(self, rng, helpers):
        A = helpers.random_sdd(rng, 30)
        b = rng.standard_normal(30)
        x = DenseCholesky(A).solve(b)
        np.testing.assert_allclose(A.matvec(x), b, atol=1e-10)


class TestTrees:
    def test_path_pivots(self, helpers):
        F = tree_factorize(helpers.path_graph(3))
        np.testing.assert_array_equal(np.sort(F.pivots), [1.0, 1.0])
        assert F.logdet == 0.0
        assert math.isclose(F.pld, math.log(3.0))

    def test_star(self):
        star = WeightedGraph.from_edges(4, [(0, 3, 1.0), (1, 3, 1.0), (2, 3, 1.0)])
        F = tree_factorize(star)
        np.testing.assert_array_equal(F.pivots, [1.0, 1.0, 1.0])
        assert math.isclose(F.pld, math.log(4.0))
        assert math.isclose(dense_pld(laplacian_of(star)), math.log(4.0), rel_tol=1e-10)

    def test_single_edge(self):
        F = tree_factorize(WeightedGraph.from_edges(2, [(0, 1, 5.0)]))
        np.testing.assert_array_equal(F.pivots, [5.0])
        assert math.isclose(F.pld, math.log(10.0))

    def test_not_a_tree(self, helpers):
        with pytest.raises(NotATree):
            tree_factorize(helpers.triangle())
        with pytest.raises(NotATree):
            tree_factorize(WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)]))

    def test_solve_examples(self, helpers):
        F = tree_factorize(helpers.path_graph(2))
        np.testing.assert_array_equal(tree_solve(F, np.zeros(1)), [0.0])
        np.testing.assert_allclose(tree_solve(F, np.array([3.0])), [3.0])

    def test_random_tree_residual(self, rng):
        T = random_tree(500, weights=(0.5, 2.0), seed=3)
        F = tree_factorize(T)
        b = rng.standard_normal(499)
        x = tree_solve(F, b)
        assert np.linalg.norm(tree_multiply(T, x) - b) <= 1e-10 * np.linalg.norm(b)

    def test_full_solve_on_range(self, rng):
        T = random_tree(60, weights=(0.5, 2.0), seed=5)
        F = tree_factorize(T)
        b = rng.standard_normal(60)
        b -= b.mean()
        x = tree_solve(F, b, full=True)
        np.testing.assert_allclose(laplacian_of(T).matvec(x), b, atol=1e-10)
        assert abs(x.mean()) <= 1e-12

    def test_block_solve(self, rng):
        T = random_tree(40, seed=1)
        F = tree_factorize(T)
        B = rng.standard_normal((39, 4))
        X = tree_solve(F, B)
        np.testing.assert_allclose(tree_multiply(T, X), B, atol=1e-10)


class TestGreedyElimination:
    def test_tree_eliminates_fully(self):
        T = random_tree(80, weights=(0.5, 2.0), seed=2)
        partial = greedy_eliminate(laplacian_of(T))
        assert partial.remaining.n <= 1
        assert math.isclose(partial.pivot_logsum, tree_factorize(T).logdet, abs_tol=1e-10)

    def test_triangle_collapses(self, helpers):
        partial = greedy_eliminate(laplacian_of(helpers.triangle()))
        assert partial.remaining.n == 1
        assert math.isclose(partial.pivot_logsum + math.log(3.0), 2.0 * math.log(3.0), abs_tol=1e-10)

    def test_torus_untouched(self):
        G = torus_graph(5, 5)
        partial = greedy_eliminate(laplacian_of(G))
        assert partial.eliminated == 0
        np.testing.assert_array_equal(partial.remaining.to_dense(), laplacian_of(G).to_dense())

    def test_stopping_rule_and_pivots(self, rng, helpers):
        G = helpers.random_connected_graph(rng, 60, 25)
        partial = greedy_eliminate(laplacian_of(G))
        assert np.all(partial.pivots > 0)
        R = partial.remaining
        if R.n > 1:
            r, c, _ = R.off_diagonal()
            degree = np.bincount(np.concatenate([r, c]), minlength=R.n)
            assert np.all(degree[:-1] >= 3)

    def test_schur_complement_logdet(self, rng, helpers):
        G = helpers.random_connected_graph(rng, 50, 20)
        L = laplacian_of(G)
        partial = greedy_eliminate(L)
        rest = partial.remaining
        rest_logdet = dense_logdet(rest.delete_index(rest.n - 1)) if rest.n > 1 else 0.0
        assert math.isclose(partial.pivot_logsum + rest_logdet, dense_logdet(L.delete_index(L.n - 1)), rel_tol=1e-10)

    def test_solve_with_exact_inner(self, rng, helpers):
        G = helpers.random_connected_graph(rng, 70, 40)
        L = laplacian_of(G)
        partial = greedy_eliminate(L)
        rest = partial.remaining
        inner = DirectSolver(rest.delete_index(rest.n - 1)).solve if rest.n > 1 else None
        b = rng.standard_normal(L.n - 1)
        x = partial.solve(b, inner)
        np.testing.assert_allclose(L.delete_index(L.n - 1).matvec(x), b, atol=1e-9)

    def test_block_solve_matches_columns(self, rng, helpers):
        G = helpers.random_connected_graph(rng, 80, 30)
        L = laplacian_of(G)
        partial = greedy_eliminate(L)
        rest = partial.remaining
        inner = DirectSolver(rest.delete_index(rest.n - 1)).solve if rest.n > 1 else None
        B = rng.standard_normal((L.n - 1, 5))
        X = partial.solve(B, inner)
        for j in range(5):
            np.testing.assert_allclose(X[:, j], partial.solve(B[:, j], inner), rtol=1e-10, atol=1e-10)

    def test_one_pivot_does_not_worsen_conditioning(self, rng, helpers):
        for _ in range(50):
            n = int(rng.integers(2, 51))
            A = helpers.random_sdd(rng, n, density=float(rng.uniform(0.1, 0.6))).to_dense()
            k = int(rng.integers(0, n))
            rest = np.delete(np.arange(n), k)
            schur = A[np.ix_(rest, rest)] - np.outer(A[rest, k], A[k, rest]) / A[k, k]
            assert np.linalg.cond(schur) <= np.linalg.cond(A) * (1.0 + 1e-9)

    def test_fallback_on_regular_graph(self):
        G = torus_graph(4, 4)
        partial = greedy_eliminate(laplacian_of(G), fallback=True)
        assert partial.fallback_steps >= 1
        assert partial.eliminated >= 1


class TestPcg:
    def test_zero_rhs(self):
        result = pcg_solve(SymmetricSparse.identity(5), np.zeros(5), None, 1e-6)
        assert result.iterations == 0
        np.testing.assert_array_equal(result.x, np.zeros(5))

    def test_identity_one_iteration(self, rng):
        b = rng.standard_normal(8)
        result = pcg_solve(SymmetricSparse.identity(8), b, None, 1e-3, kappa=1.0)
        assert result.iterations == 1
        np.testing.assert_allclose(result.x, b)

    def test_grid_with_tree_preconditioner(self, rng):
        from sddlogdet.services.sparsifiers import low_stretch_tree

        G = grid_graph(20, 20)
        T, _ = low_stretch_tree(G, seed=0)
        factor = tree_factorize(T)
        F = _grounded(G)
        b = rng.standard_normal(F.n)
        nu = 1e-6
        lo, hi, _ = pencil_extremes(F, _grounded(T), dense_max=500)
        result = pcg_solve(F, b, lambda r: tree_solve(factor, r), nu, kappa=hi / lo)
        assert result.converged
        exact = np.linalg.solve(F.to_dense(), b)
        err = result.x - exact
        assert math.sqrt(err @ F.matvec(err)) <= nu * math.sqrt(exact @ F.matvec(exact))

    def test_budget_exhausted(self, rng):
        F = _grounded(grid_graph(10, 10))
        b = rng.standard_normal(F.n)
        result = pcg_solve(F, b, None, 1e-12, kappa=1e4, max_iter=2)
        assert not result.converged
        with pytest.raises(MaxIterationsExceeded) as info:
            pcg_solve(F, b, None, 1e-12, kappa=1e4, max_iter=2, strict=True)
        assert info.value.iterations == 2
        assert info.value.best is not None

    def test_iteration_cap_formula(self):
        assert pcg_max_iterations(100.0, 0.5) == math.ceil(10.0 * 10.0 * math.log(2.0) + 100)


class TestConditionEstimate:
    def test_identity(self):
        kappa = estimate_condition_number(SymmetricSparse.identity(10))
        assert 1.0 <= kappa <= 4.0

    def test_two_scales(self):
        kappa = estimate_condition_number(SymmetricSparse.from_dense(np.diag([1.0, 100.0])))
        assert 50.0 <= kappa <= 400.0

    def test_grounded_path(self, helpers):
        F = laplacian_of(helpers.path_graph(10)).delete_index(9)
        eig = np.linalg.eigvalsh(F.to_dense())
        exact = eig[-1] / eig[0]
        kappa = estimate_condition_number(F, solver=DirectSolver(F).solve)
        assert exact / 4.0 <= kappa <= exact * 4.0


def test_pencil_extremes_dense_and_probe(rng, helpers):
    G = helpers.random_connected_graph(rng, 150, 80)
    from sddlogdet.services.sparsifiers import low_stretch_tree

    T, _ = low_stretch_tree(G, seed=1)
    F_G, F_T = _grounded(G), _grounded(T)
    lo_d, hi_d, method = pencil_extremes(F_G, F_T, dense_max=200)
    assert method == "dense"
    assert lo_d >= 1.0 - 1e-9
    lo_p, hi_p, method = pencil_extremes(F_G, F_T, dense_max=10, seed=4)
    assert method == "probe"
    assert math.isclose(hi_p, hi_d, rel_tol=1e-4)
    assert math.isclose(lo_p, lo_d, rel_tol=1e-4)
