"""Seeded workload generators: weighted graphs turned into SDD matrices L_G + s I."""

from __future__ import annotations

import logging
from collections import Counter
from typing import Literal, Optional, Sequence, Tuple

import numpy as np

from sddlogdet.core.errors import InvalidParameter
from sddlogdet.core.rng import generator
from sddlogdet.core.sparse import SymmetricSparse, WeightedGraph, laplacian_of

logger = logging.getLogger(__name__)

GraphKind = Literal["grid", "torus", "regular", "tree", "path"]

_SWAP_ROUNDS = 1000


def _weights(m: int, weights: Optional[Tuple[float, float]], seed: int, label: int) -> np.ndarray:
    if weights is None:
        return np.ones(m)
    low, high = weights
    if not 0.0 < low <= high:
        raise InvalidParameter(f"weight range must satisfy 0 < a <= b, got ({low}, {high})")
    return generator(seed, 0x3E16, label).uniform(low, high, size=m)


def grid_graph(rows: int, cols: int, weights: Optional[Tuple[float, float]] = None, seed: int = 0) -> WeightedGraph:
    if rows < 1 or cols < 1:
        raise InvalidParameter(f"grid dimensions must be positive, got {rows}x{cols}")
    idx = np.arange(rows * cols).reshape(rows, cols)
    u = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    v = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return WeightedGraph.from_arrays(rows * cols, u, v, _weights(u.size, weights, seed, 0))


def torus_graph(rows: int, cols: int, weights: Optional[Tuple[float, float]] = None, seed: int = 0) -> WeightedGraph:
    if rows < 3 or cols < 3:
        raise InvalidParameter(f"torus needs at least 3x3 vertices, got {rows}x{cols}")
    idx = np.arange(rows * cols).reshape(rows, cols)
    u = np.concatenate([idx.ravel(), idx.ravel()])
    v = np.concatenate([np.roll(idx, -1, axis=1).ravel(), np.roll(idx, -1, axis=0).ravel()])
    return WeightedGraph.from_arrays(rows * cols, u, v, _weights(u.size, weights, seed, 1))


def _key(a: int, b: int) -> Tuple[int, int]:
    return (a, b) if a <= b else (b, a)


def _repair_pairing(pairs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Double-edge swaps that move every loop and repeated pair into a simple position."""
    pairs = pairs.copy()
    m = pairs.shape[0]
    counts: Counter[Tuple[int, int]] = Counter(_key(a, b) for a, b in pairs.tolist())

    def bad(i: int) -> bool:
        a, b = int(pairs[i, 0]), int(pairs[i, 1])
        return a == b or counts[_key(a, b)] > 1

    budget = _SWAP_ROUNDS * m
    swaps = 0
    pending = [i for i in range(m) if bad(i)]
    while pending:
        i = pending.pop()
        if not bad(i):
            continue
        while bad(i):
            if swaps >= budget:
                raise InvalidParameter(f"pairing repair did not converge after {budget} swaps")
            swaps += 1
            j = int(rng.integers(0, m))
            if j == i:
                continue
            a, b = int(pairs[i, 0]), int(pairs[i, 1])
            c, d = int(pairs[j, 0]), int(pairs[j, 1])
            if rng.random() < 0.5:
                c, d = d, c
            first, second = _key(a, c), _key(b, d)
            if a == c or b == d or first == second or counts[first] or counts[second]:
                continue
            counts[_key(a, b)] -= 1
            counts[_key(c, d)] -= 1
            counts[first] += 1
            counts[second] += 1
            pairs[i] = (a, c)
            pairs[j] = (b, d)
            if bad(j):
                pending.append(j)
    return pairs


def random_regular_graph(
    n: int, degree: int, weights: Optional[Tuple[float, float]] = None, seed: int = 0
) -> WeightedGraph:
    """Configuration-model pairing, repaired into a simple graph by double-edge swaps."""
    if degree < 1 or degree >= n:
        raise InvalidParameter(f"degree must lie in [1, n), got {degree} for n={n}")
    if (n * degree) % 2:
        raise InvalidParameter(f"n * degree must be even, got {n} * {degree}")
    if degree == n - 1:
        a, b = np.triu_indices(n, k=1)
    else:
        rng = generator(seed, 0x4E6A)
        stubs = np.repeat(np.arange(n), degree)
        pairs = _repair_pairing(rng.permutation(stubs).reshape(-1, 2), rng)
        a, b = np.minimum(pairs[:, 0], pairs[:, 1]), np.maximum(pairs[:, 0], pairs[:, 1])
    logger.debug("Random %d-regular graph on %d vertices", degree, n)
    return WeightedGraph.from_arrays(n, a, b, _weights(a.size, weights, seed, 2))


def random_tree(n: int, weights: Optional[Tuple[float, float]] = None, seed: int = 0) -> WeightedGraph:
    """Uniform random recursive tree: vertex i attaches to a random earlier vertex."""
    if n < 1:
        raise InvalidParameter(f"tree needs at least one vertex, got {n}")
    rng = generator(seed, 0x78EE)
    v = np.arange(1, n)
    u = np.array([rng.integers(0, i) for i in v], dtype=np.int64)
    return WeightedGraph.from_arrays(n, u, v, _weights(v.size, weights, seed, 3))


def path_graph(n: int, weights: Optional[Tuple[float, float]] = None, seed: int = 0) -> WeightedGraph:
    if n < 1:
        raise InvalidParameter(f"path needs at least one vertex, got {n}")
    u = np.arange(n - 1)
    return WeightedGraph.from_arrays(n, u, u + 1, _weights(u.size, weights, seed, 4))


def shifted_laplacian(G: WeightedGraph, shift: float) -> SymmetricSparse:
    """L_G + shift * I; positive definite when shift > 0."""
    if shift < 0:
        raise InvalidParameter(f"shift must be non-negative, got {shift}")
    L = laplacian_of(G)
    return L + SymmetricSparse.identity(G.n, shift) if shift > 0 else L


def generate(
    kind: GraphKind,
    size: Sequence[int],
    shift: float = 1.0,
    weights: Optional[Tuple[float, float]] = None,
    seed: int = 0,
) -> SymmetricSparse:
    """Build the SDD matrix of one workload.

    ``size`` is (rows, cols) for grid and torus, (n, degree) for regular and
    (n,) for tree and path.
    """
    if kind == "grid":
        G = grid_graph(int(size[0]), int(size[1]), weights, seed)
    elif kind == "torus":
        G = torus_graph(int(size[0]), int(size[1]), weights, seed)
    elif kind == "regular":
        G = random_regular_graph(int(size[0]), int(size[1]), weights, seed)
    elif kind == "tree":
        G = random_tree(int(size[0]), weights, seed)
    elif kind == "path":
        G = path_graph(int(size[0]), weights, seed)
    else:
        raise InvalidParameter(f"unknown graph kind {kind!r}")
    logger.info("Generated %s graph n=%d m=%d shift=%g", kind, G.n, G.m, shift)
    return shifted_laplacian(G, shift)


__all__ = [
    "grid_graph",
    "torus_graph",
    "random_regular_graph",
    "random_tree",
    "path_graph",
    "shifted_laplacian",
    "generate",
]
