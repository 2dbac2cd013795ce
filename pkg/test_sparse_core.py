import numpy as np
import pytest

from sddlogdet.core.errors import AsymmetricInput, DimensionMismatch, IndexOutOfRange, InvalidParameter, NotALaplacian
from sddlogdet.core.rng import generator, pairwise_sum, sample_generator
from sddlogdet.core.sparse import (
    SymmetricSparse,
    WeightedGraph,
    build_from_triplets,
    connected_components,
    graph_of,
    is_connected,
    is_sdd,
    laplacian_of,
    matvec,
    split_components,
)


def test_single_diagonal_entry():
    A = build_from_triplets(2, [(0, 0, 1.0)])
    np.testing.assert_array_equal(A.to_dense(), np.diag([1.0, 0.0]))


def test_direct_construction_two_by_two():
    A = build_from_triplets(2, [(0, 0, 2.0), (0, 1, -1.0), (1, 1, 2.0)])
    np.testing.assert_array_equal(A.to_dense(), [[2.0, -1.0], [-1.0, 2.0]])


def test_both_halves_are_summed():
    A = build_from_triplets(3, [(0, 1, -1.0), (1, 0, -1.0), (2, 2, 1.0)])
    assert A.to_dense()[0, 1] == -2.0
    assert A.to_dense()[1, 0] == -2.0


def test_unequal_halves_rejected():
    with pytest.raises(AsymmetricInput):
        build_from_triplets(2, [(0, 1, -1.0), (1, 0, -0.5)])


def test_triplet_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        build_from_triplets(2, [(0, 2, 1.0)])


def test_storage_is_sorted_upper_triangle():
    A = build_from_triplets(3, [(2, 1, 4.0), (1, 2, 4.0), (0, 0, 1.0), (1, 0, 3.0)])
    assert np.all(A.rows <= A.cols)
    keys = A.rows * 3 + A.cols
    assert np.all(np.diff(keys) > 0)


def test_is_sdd_examples(helpers):
    check = is_sdd(SymmetricSparse.from_dense(np.array([[2.0, -1.0], [-1.0, 2.0]])))
    assert check
    np.testing.assert_allclose(check.slack, [1.0, 1.0])

    assert not is_sdd(SymmetricSparse.from_dense(np.array([[1.0, -2.0], [-2.0, 1.0]])))

    tri = is_sdd(laplacian_of(helpers.triangle()))
    assert tri
    np.testing.assert_allclose(tri.slack, [0.0, 0.0, 0.0])


def test_matvec_examples(rng, helpers):
    x = rng.standard_normal(5)
    np.testing.assert_array_equal(matvec(SymmetricSparse.identity(5), x), x)
    A = SymmetricSparse.from_dense(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    np.testing.assert_allclose(matvec(A, np.ones(2)), [1.0, 1.0])

    B = helpers.random_sdd(rng, 50)
    y = rng.standard_normal(50)
    dense = B.to_dense()
    np.testing.assert_allclose(B.matvec(y), dense @ y, rtol=1e-12, atol=1e-12)
    z = rng.standard_normal(50)
    assert abs(y @ B.matvec(z) - z @ B.matvec(y)) <= 1e-12 * np.abs(dense).sum()

    with pytest.raises(DimensionMismatch):
        B.matvec(np.ones(49))


def test_matvec_block_columns(rng, helpers):
    B = helpers.random_sdd(rng, 20)
    X = rng.standard_normal((20, 3))
    np.testing.assert_allclose(B.matvec(X), B.to_dense() @ X, rtol=1e-12, atol=1e-12)


def test_laplacian_examples(helpers):
    np.testing.assert_array_equal(laplacian_of(helpers.path_graph(2)).to_dense(), [[1.0, -1.0], [-1.0, 1.0]])
    L = laplacian_of(helpers.triangle()).to_dense()
    np.testing.assert_array_equal(np.diag(L), [2.0, 2.0, 2.0])
    assert L[0, 1] == L[1, 2] == L[0, 2] == -1.0


def test_not_a_laplacian():
    bad = SymmetricSparse.from_dense(np.array([[1.0, -1.0], [-1.0, 1.0 + 1e-3]]))
    with pytest.raises(NotALaplacian):
        graph_of(bad)


def test_graph_laplacian_round_trip(rng, helpers):
    G = helpers.random_connected_graph(rng, 30, 20)
    L = laplacian_of(G)
    assert np.abs(L.matvec(np.ones(G.n))).max() <= 1e-12 * L.max_abs
    assert is_sdd(L)
    assert graph_of(L).same_edges(G, rtol=1e-12)


def test_parallel_edges_merged():
    G = WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 0, 2.0), (1, 2, 1.0)])
    assert G.m == 2
    assert G.edges()[0] == (0, 1, 3.0)


def test_graph_validation():
    with pytest.raises(InvalidParameter):
        WeightedGraph.from_edges(2, [(0, 0, 1.0)])
    with pytest.raises(InvalidParameter):
        WeightedGraph.from_edges(2, [(0, 1, -1.0)])
    with pytest.raises(IndexOutOfRange):
        WeightedGraph.from_edges(2, [(0, 2, 1.0)])


def test_components(helpers):
    assert is_connected(helpers.triangle())
    two = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
    labels = connected_components(two)
    assert labels.max() == 1
    assert labels[0] == labels[1] != labels[2] == labels[3]
    parts = split_components(two)
    assert [p[1].n for p in parts] == [2, 2]

    from sddlogdet.services.generators import grid_graph

    assert is_connected(grid_graph(10, 10))


def test_principal_and_delete_index(helpers):
    L = laplacian_of(helpers.path_graph(3))
    np.testing.assert_array_equal(L.delete_index(2).to_dense(), [[1.0, -1.0], [-1.0, 2.0]])
    np.testing.assert_array_equal(L.principal([0, 2]).to_dense(), [[1.0, 0.0], [0.0, 1.0]])


def test_sample_streams_are_position_independent():
    a = sample_generator(7, (1, 2), 5).standard_normal(4)
    b = sample_generator(7, (1, 2), 5).standard_normal(4)
    c = sample_generator(7, (1, 2), 6).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(generator(7, 1).random(3), generator(7, 2).random(3))


def test_pairwise_sum_fixed_order():
    values = np.array([1e16, 1.0, -1e16, 1.0, 3.0])
    assert pairwise_sum(values) == pairwise_sum(values.copy())
    assert pairwise_sum(np.arange(10.0)) == 45.0
    assert pairwise_sum(np.zeros(0)) == 0.0
