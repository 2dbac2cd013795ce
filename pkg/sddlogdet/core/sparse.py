"""Immutable symmetric sparse matrices and weighted graphs.

`SymmetricSparse` stores only the upper triangle (row <= col) in sorted,
duplicate-free coordinate arrays; the full symmetric operator is materialised
lazily as a scipy CSR matrix. `WeightedGraph` is the vertex/edge view of a
Laplacian with canonical ``u < v`` edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from sddlogdet.core.errors import (
    AsymmetricInput,
    DimensionMismatch,
    IndexOutOfRange,
    InvalidParameter,
    NotALaplacian,
)

logger = logging.getLogger(__name__)

LAPLACIAN_RTOL = 1e-9


def _coalesce(
    n: int, rows: np.ndarray, cols: np.ndarray, values: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sort by (row, col) and sum duplicates."""
    if rows.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), np.zeros(0, dtype=np.float64)
    keys = rows * n + cols
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    values = values[order]
    unique_keys, starts = np.unique(keys, return_index=True)
    summed = np.add.reduceat(values, starts)
    return unique_keys // n, unique_keys % n, summed


@dataclass(frozen=True, eq=False)
class SymmetricSparse:
    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    @classmethod
    def from_arrays(
        cls,
        n: int,
        rows: Sequence[int] | np.ndarray,
        cols: Sequence[int] | np.ndarray,
        values: Sequence[float] | np.ndarray,
        drop_zeros: bool = True,
    ) -> "SymmetricSparse":
        """Canonicalise arbitrary triplets, folding lower entries onto the upper triangle."""
        r = np.asarray(rows, dtype=np.int64).ravel()
        c = np.asarray(cols, dtype=np.int64).ravel()
        v = np.asarray(values, dtype=np.float64).ravel()
        if not (r.size == c.size == v.size):
            raise DimensionMismatch("rows, cols and values must have equal length")
        if n < 0:
            raise InvalidParameter(f"dimension must be non-negative, got {n}")
        if r.size and (r.min() < 0 or c.min() < 0 or r.max() >= n or c.max() >= n):
            raise IndexOutOfRange(f"triplet index outside [0, {n})")
        lo = np.minimum(r, c)
        hi = np.maximum(r, c)
        lo, hi, v = _coalesce(n, lo, hi, v)
        if drop_zeros:
            keep = v != 0.0
            lo, hi, v = lo[keep], hi[keep], v[keep]
        for arr in (lo, hi, v):
            arr.setflags(write=False)
        return cls(n=int(n), rows=lo, cols=hi, values=v)

    @classmethod
    def from_scipy(cls, matrix: sp.spmatrix | sp.sparray) -> "SymmetricSparse":
        """Take the upper triangle of a (symmetric) scipy matrix."""
        upper = sp.triu(sp.coo_matrix(matrix)).tocoo()
        return cls.from_arrays(upper.shape[0], upper.row, upper.col, upper.data)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SymmetricSparse":
        arr = np.asarray(dense, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {arr.shape}")
        if not np.array_equal(arr, arr.T):
            raise AsymmetricInput("dense input is not symmetric")
        r, c = np.nonzero(np.triu(arr))
        return cls.from_arrays(arr.shape[0], r, c, arr[r, c])

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "SymmetricSparse":
        idx = np.arange(n)
        return cls.from_arrays(n, idx, idx, np.full(n, float(scale)))

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([self.values, self.values[off]])
        return sp.csr_matrix((v, (r, c)), shape=(self.n, self.n))

    @cached_property
    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        on = self.rows == self.cols
        d[self.rows[on]] = self.values[on]
        d.setflags(write=False)
        return d

    def off_diagonal(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        off = self.rows != self.cols
        return self.rows[off], self.cols[off], self.values[off]

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def matvec(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[0] != self.n or arr.ndim > 2:
            raise DimensionMismatch(f"vector of length {arr.shape[0]} for a {self.n}x{self.n} matrix")
        return np.asarray(self.csr @ arr)

    def to_dense(self) -> np.ndarray:
        return np.asarray(self.csr.toarray())

    def principal(self, keep: Sequence[int] | np.ndarray) -> "SymmetricSparse":
        """Principal submatrix on the (sorted) index set ``keep``, relabelled 0..k-1."""
        idx = np.asarray(keep, dtype=np.int64)
        mapping = np.full(self.n, -1, dtype=np.int64)
        mapping[idx] = np.arange(idx.size)
        r = mapping[self.rows]
        c = mapping[self.cols]
        mask = (r >= 0) & (c >= 0)
        return SymmetricSparse.from_arrays(int(idx.size), r[mask], c[mask], self.values[mask])

    def delete_index(self, k: int) -> "SymmetricSparse":
        if not 0 <= k < self.n:
            raise IndexOutOfRange(f"index {k} outside [0, {self.n})")
        keep = np.delete(np.arange(self.n), k)
        return self.principal(keep)

    def scaled(self, alpha: float) -> "SymmetricSparse":
        return SymmetricSparse.from_arrays(self.n, self.rows, self.cols, self.values * alpha)

    def __add__(self, other: "SymmetricSparse") -> "SymmetricSparse":
        if other.n != self.n:
            raise DimensionMismatch(f"cannot add {self.n}x{self.n} and {other.n}x{other.n}")
        return SymmetricSparse.from_arrays(
            self.n,
            np.concatenate([self.rows, other.rows]),
            np.concatenate([self.cols, other.cols]),
            np.concatenate([self.values, other.values]),
        )

    def triplets(self) -> List[Tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.rows, self.cols, self.values)]


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    n: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @classmethod
    def from_arrays(
        cls,
        n: int,
        u: Sequence[int] | np.ndarray,
        v: Sequence[int] | np.ndarray,
        w: Sequence[float] | np.ndarray,
    ) -> "WeightedGraph":
        a = np.asarray(u, dtype=np.int64).ravel()
        b = np.asarray(v, dtype=np.int64).ravel()
        weights = np.asarray(w, dtype=np.float64).ravel()
        if not (a.size == b.size == weights.size):
            raise DimensionMismatch("edge arrays must have equal length")
        if a.size:
            if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n:
                raise IndexOutOfRange(f"edge endpoint outside [0, {n})")
            if np.any(a == b):
                raise InvalidParameter("self-loops are not allowed")
            if np.any(~(weights > 0)):
                raise InvalidParameter("edge weights must be positive")
        lo, hi, merged = _coalesce(n, np.minimum(a, b), np.maximum(a, b), weights)
        for arr in (lo, hi, merged):
            arr.setflags(write=False)
        return cls(n=int(n), u=lo, v=hi, w=merged)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int, float]]) -> "WeightedGraph":
        triples = list(edges)
        if not triples:
            return cls.from_arrays(n, [], [], [])
        a, b, w = zip(*triples)
        return cls.from_arrays(n, a, b, w)

    @property
    def m(self) -> int:
        return int(self.w.size)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        r = np.concatenate([self.u, self.v])
        c = np.concatenate([self.v, self.u])
        return sp.csr_matrix((np.concatenate([self.w, self.w]), (r, c)), shape=(self.n, self.n))

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.u, self.v]), minlength=self.n)

    def edges(self) -> List[Tuple[int, int, float]]:
        return [(int(a), int(b), float(w)) for a, b, w in zip(self.u, self.v, self.w)]

    def scaled(self, alpha: float) -> "WeightedGraph":
        return WeightedGraph.from_arrays(self.n, self.u, self.v, self.w * alpha)

    def subgraph(self, mask: np.ndarray) -> "WeightedGraph":
        """Same vertex set, edges selected by a boolean mask."""
        return WeightedGraph.from_arrays(self.n, self.u[mask], self.v[mask], self.w[mask])

    def induced(self, vertices: Sequence[int] | np.ndarray) -> "WeightedGraph":
        idx = np.asarray(vertices, dtype=np.int64)
        mapping = np.full(self.n, -1, dtype=np.int64)
        mapping[idx] = np.arange(idx.size)
        a = mapping[self.u]
        b = mapping[self.v]
        mask = (a >= 0) & (b >= 0)
        return WeightedGraph.from_arrays(int(idx.size), a[mask], b[mask], self.w[mask])

    def same_edges(self, other: "WeightedGraph", rtol: float = 0.0) -> bool:
        if self.n != other.n or self.m != other.m:
            return False
        if not (np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)):
            return False
        return bool(np.allclose(self.w, other.w, rtol=rtol, atol=0.0))


@dataclass(frozen=True)
class SddCheck:
    is_sdd: bool
    slack: np.ndarray = field(repr=False)

    def __bool__(self) -> bool:
        return self.is_sdd


def build_from_triplets(n: int, triplets: Iterable[Tuple[int, int, float]]) -> SymmetricSparse:
    """Build a symmetric matrix from (row, col, value) triplets.

    Repeated triplets for the same position are summed. When a pair is given
    through both halves, the upper and lower sums must agree exactly and
    both contribute to the stored entry.
    """
    items = list(triplets)
    if not items:
        return SymmetricSparse.from_arrays(n, [], [], [])
    r = np.asarray([t[0] for t in items], dtype=np.int64)
    c = np.asarray([t[1] for t in items], dtype=np.int64)
    v = np.asarray([t[2] for t in items], dtype=np.float64)
    if r.min() < 0 or c.min() < 0 or r.max() >= n or c.max() >= n:
        bad = next(t for t in items if not (0 <= t[0] < n and 0 <= t[1] < n))
        raise IndexOutOfRange(f"triplet {bad} outside a {n}x{n} matrix")

    upper = r < c
    lower = r > c
    if upper.any() and lower.any():
        ur, uc, uv = _coalesce(n, r[upper], c[upper], v[upper])
        lr, lc, lv = _coalesce(n, c[lower], r[lower], v[lower])
        common, ui, li = np.intersect1d(ur * n + uc, lr * n + lc, return_indices=True)
        mismatch = uv[ui] != lv[li]
        if mismatch.any():
            k = int(np.argmax(mismatch))
            row, col = divmod(int(common[k]), n)
            raise AsymmetricInput(
                f"entry ({row},{col})={uv[ui][k]!r} differs from ({col},{row})={lv[li][k]!r}"
            )
    return SymmetricSparse.from_arrays(n, r, c, v)


def is_sdd(A: SymmetricSparse) -> SddCheck:
    """Row-wise diagonal dominance test with slack A_ii - sum_{j != i} |A_ij|."""
    r, c, v = A.off_diagonal()
    offsum = np.zeros(A.n)
    np.add.at(offsum, r, np.abs(v))
    np.add.at(offsum, c, np.abs(v))
    slack = A.diagonal - offsum
    # rounding in assembled Laplacians leaves slack at the ulp level
    tol = 1e-12 * (np.abs(A.diagonal) + offsum)
    ok = bool(np.all(slack >= -tol))
    return SddCheck(is_sdd=ok, slack=slack)


def matvec(A: SymmetricSparse, x: np.ndarray) -> np.ndarray:
    return A.matvec(x)


def laplacian_of(G: WeightedGraph) -> SymmetricSparse:
    deg = np.zeros(G.n)
    np.add.at(deg, G.u, G.w)
    np.add.at(deg, G.v, G.w)
    idx = np.arange(G.n)
    return SymmetricSparse.from_arrays(
        G.n,
        np.concatenate([idx, G.u]),
        np.concatenate([idx, G.v]),
        np.concatenate([deg, -G.w]),
    )


def check_laplacian(L: SymmetricSparse, rtol: Optional[float] = None) -> None:
    tol = (LAPLACIAN_RTOL if rtol is None else rtol) * L.max_abs
    r, c, v = L.off_diagonal()
    if v.size and v.max() > tol:
        k = int(np.argmax(v))
        raise NotALaplacian(f"positive off-diagonal entry ({r[k]},{c[k]})={v[k]!r}")
    rowsum = L.matvec(np.ones(L.n)) if L.n else np.zeros(0)
    if rowsum.size and np.abs(rowsum).max() > tol:
        k = int(np.argmax(np.abs(rowsum)))
        raise NotALaplacian(f"row {k} sums to {rowsum[k]!r}")


def graph_of(L: SymmetricSparse, rtol: Optional[float] = None) -> WeightedGraph:
    check_laplacian(L, rtol)
    r, c, v = L.off_diagonal()
    keep = v < 0
    return WeightedGraph.from_arrays(L.n, r[keep], c[keep], -v[keep])


def connected_components(G: WeightedGraph) -> np.ndarray:
    if G.n == 0:
        return np.zeros(0, dtype=np.int64)
    _, labels = csgraph.connected_components(G.adjacency, directed=False)
    return labels.astype(np.int64)


def is_connected(G: WeightedGraph) -> bool:
    return G.n <= 1 or int(connected_components(G).max()) == 0


def split_components(G: WeightedGraph) -> List[Tuple[np.ndarray, WeightedGraph]]:
    labels = connected_components(G)
    count = int(labels.max()) + 1 if labels.size else 0
    parts = []
    for k in range(count):
        vertices = np.flatnonzero(labels == k)
        parts.append((vertices, G.induced(vertices)))
    return parts


__all__ = [
    "SymmetricSparse",
    "WeightedGraph",
    "SddCheck",
    "build_from_triplets",
    "is_sdd",
    "matvec",
    "laplacian_of",
    "graph_of",
    "check_laplacian",
    "connected_components",
    "is_connected",
    "split_components",
]
