import math

import numpy as np
import pytest
from pydantic import ValidationError

from sddlogdet.core.errors import StretchBelowMinimum, VertexMismatch
from sddlogdet.core.sparse import WeightedGraph, laplacian_of
from sddlogdet.services.direct_solvers import dense_logdet, dense_pld, tree_factorize
from sddlogdet.services.generators import grid_graph
from sddlogdet.services.sparsifiers import low_stretch_tree
from sddlogdet.services.stretch import (
    approx_effective_resistances,
    approx_stretch,
    generalized_stretch_exact,
    pld_bounds_from_stretch,
    root_resistances,
    tree_stretch_exact,
)


def test_triangle_over_path(helpers):
    G, T = helpers.triangle(), helpers.path_graph(3)
    report = tree_stretch_exact(G, T)
    assert math.isclose(report.value, 4.0)
    np.testing.assert_allclose(np.sort(report.per_edge), [1.0, 1.0, 2.0])
    lower, upper = pld_bounds_from_stretch(tree_factorize(T).pld, report.value, 3)
    assert math.isclose(lower, 2.0 * math.log(3.0))
    assert math.isclose(upper, math.log(3.0) + 2.0 * math.log(2.0))


def test_tree_against_itself():
    from sddlogdet.services.generators import random_tree

    T = random_tree(40, weights=(0.5, 3.0), seed=4)
    assert math.isclose(tree_stretch_exact(T, T).value, 39.0)
    lower, upper = pld_bounds_from_stretch(tree_factorize(T).pld, 39.0, 40)
    assert lower == upper == tree_factorize(T).pld


def test_self_stretch_is_n_minus_one(rng, helpers):
    G = helpers.random_connected_graph(rng, 25, 30)
    assert math.isclose(generalized_stretch_exact(G, G).value, 24.0, rel_tol=1e-10)


def test_scaling(rng, helpers):
    G = helpers.random_connected_graph(rng, 30, 20)
    T, report = low_stretch_tree(G, seed=0)
    base = report.value
    assert math.isclose(tree_stretch_exact(G, T.scaled(4.0)).value, base / 4.0, rel_tol=1e-12)
    assert math.isclose(tree_stretch_exact(G.scaled(3.0), T).value, 3.0 * base, rel_tol=1e-12)


def test_tree_stretch_matches_solves(rng, helpers):
    G = helpers.random_connected_graph(rng, 50, 40)
    T, report = low_stretch_tree(G, seed=2)
    solved = generalized_stretch_exact(G, T)
    assert math.isclose(report.value, solved.value, rel_tol=1e-9)
    np.testing.assert_allclose(report.per_edge, solved.per_edge, rtol=1e-9)


def test_trace_identity(rng, helpers):
    G = helpers.random_connected_graph(rng, 30, 40)
    T, _ = low_stretch_tree(G, seed=3)
    extra = np.flatnonzero(rng.random(G.m) < 0.3)
    H = WeightedGraph.from_arrays(
        G.n, np.concatenate([T.u, G.u[extra]]), np.concatenate([T.v, G.v[extra]]), np.concatenate([T.w, G.w[extra]])
    )
    dense = np.trace(np.linalg.pinv(laplacian_of(H).to_dense()) @ laplacian_of(G).to_dense())
    assert math.isclose(generalized_stretch_exact(G, H).value, dense, rel_tol=1e-8)


def test_root_resistances_on_path(helpers):
    F = tree_factorize(helpers.path_graph(5, w=2.0))
    res = root_resistances(F)
    # the root sits at the last vertex
    np.testing.assert_allclose(res, [2.0, 1.5, 1.0, 0.5, 0.0])


def test_vertex_mismatch(helpers):
    with pytest.raises(VertexMismatch):
        tree_stretch_exact(helpers.triangle(), helpers.path_graph(4))


def test_sketch_ensemble():
    G = grid_graph(6, 6)
    T, report = low_stretch_tree(G, seed=0)
    eps = 0.3
    for seed in range(10):
        approx = approx_stretch(G, T, eps, seed=seed)
        assert abs(approx.value - report.value) <= eps * report.value
        assert approx.eps_sketch == eps


class TestBounds:
    def test_below_minimum(self):
        with pytest.raises(StretchBelowMinimum):
            pld_bounds_from_stretch(0.0, 2.5, 4)

    def test_rounding_below_floor_is_clamped(self):
        lower, upper = pld_bounds_from_stretch(1.0, 3.0 * (1.0 - 1e-12), 4)
        assert lower == upper == 1.0

    def test_single_vertex(self):
        assert pld_bounds_from_stretch(0.7, 0.0, 1) == (0.7, 0.7)

    def test_random_sandwich(self, rng, helpers):
        for case in range(200):
            n = int(rng.integers(4, 41))
            G = helpers.random_connected_graph(rng, n, int(rng.integers(0, 2 * n)))
            T, report = low_stretch_tree(G, seed=case)
            lower, upper = pld_bounds_from_stretch(tree_factorize(T).pld, report.value, n)
            truth = dense_pld(laplacian_of(G))
            slack = 1e-9 * max(1.0, abs(truth))
            assert lower - slack <= truth <= upper + slack


def test_resistance_sketch_against_pseudoinverse(rng, helpers):
    G = helpers.random_connected_graph(rng, 40, 40)
    eps = 0.25
    sketch = approx_effective_resistances(G, eps, seed=6)
    Lp = np.linalg.pinv(laplacian_of(G).to_dense())
    exact = Lp[G.u, G.u] + Lp[G.v, G.v] - 2.0 * Lp[G.u, G.v]
    approx = sketch.query_many(G.u, G.v)
    inside = np.abs(approx - exact) <= eps * exact
    assert inside.mean() >= 0.95
    assert math.isclose(sketch.query(int(G.u[0]), int(G.v[0])), approx[0])


def _grounded_dense(G: WeightedGraph) -> np.ndarray:
    return laplacian_of(G).delete_index(G.n - 1).to_dense()


def _with_extra_edges(rng, G: WeightedGraph, count: int) -> WeightedGraph:
    a = rng.integers(0, G.n, size=count)
    b = (a + rng.integers(1, G.n, size=count)) % G.n
    return WeightedGraph.from_arrays(
        G.n,
        np.concatenate([G.u, a]),
        np.concatenate([G.v, b]),
        np.concatenate([G.w, rng.uniform(0.5, 2.0, size=count)]),
    )


def test_stretch_dominates_pencil(rng, helpers):
    for _ in range(40):
        n = int(rng.integers(3, 61))
        G = helpers.random_connected_graph(rng, n, int(rng.integers(0, 2 * n)))
        H = helpers.random_connected_graph(rng, n, int(rng.integers(0, n)))
        st = generalized_stretch_exact(G, H).value
        F_G, F_H = _grounded_dense(G), _grounded_dense(H)
        gap = np.linalg.eigvalsh(st * F_H - F_G).min()
        assert gap >= -1e-8 * max(1.0, np.abs(F_G).max() * n)


def test_stretch_is_monotone_in_edges(rng, helpers):
    for _ in range(30):
        n = int(rng.integers(4, 40))
        A = helpers.random_connected_graph(rng, n, int(rng.integers(0, n)))
        B = _with_extra_edges(rng, A, int(rng.integers(1, n)))
        C = helpers.random_connected_graph(rng, n, int(rng.integers(0, n)))
        # L_A <= L_B
        assert generalized_stretch_exact(C, A).value >= generalized_stretch_exact(C, B).value * (1.0 - 1e-10)
        assert generalized_stretch_exact(A, C).value <= generalized_stretch_exact(B, C).value * (1.0 + 1e-10)


def test_logdet_below_trace_bound(rng, helpers):
    for _ in range(100):
        n = int(rng.integers(2, 30))
        A = helpers.random_sdd(rng, n, density=float(rng.uniform(0.1, 0.5)))
        assert dense_logdet(A) <= n * math.log(float(A.diagonal.sum()) / n) + 1e-9


def test_rank_one_below_scaled_laplacian(rng, helpers):
    for _ in range(100):
        n = int(rng.integers(3, 30))
        L = laplacian_of(helpers.random_connected_graph(rng, n, int(rng.integers(0, n)))).to_dense()
        x = rng.standard_normal(n)
        x -= x.mean()
        scale = float(x @ np.linalg.pinv(L) @ x)
        gap = np.linalg.eigvalsh(scale * L - np.outer(x, x)).min()
        assert gap >= -1e-9 * max(1.0, scale * np.abs(L).max() * n)


def test_report_dump_leaves_out_per_edge(helpers):
    report = tree_stretch_exact(helpers.triangle(), helpers.path_graph(3))
    assert report.per_edge is not None and report.per_edge.size == 3
    dumped = report.model_dump()
    assert "per_edge" not in dumped
    assert dumped["method"] == "exact-tree" and math.isclose(dumped["value"], 4.0)
    with pytest.raises(ValidationError):
        report.value = 1.0
