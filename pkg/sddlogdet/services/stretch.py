"""Generalized stretch st_H(G) = sum_e w_e R_H(e) = Tr(L_H^+ L_G) and the
pseudo-log-determinant sandwich it yields:

    pld(H) + ln(st - n + 2) <= pld(G) <= pld(H) + (n - 1) ln(st / (n - 1))

whenever L_H <= L_G.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from sddlogdet.config.environments import config
from sddlogdet.core.errors import DisconnectedGraph, InvalidParameter, StretchBelowMinimum, VertexMismatch
from sddlogdet.core.rng import generator
from sddlogdet.core.sparse import WeightedGraph, is_connected, laplacian_of
from sddlogdet.models.reports import StretchReport
from sddlogdet.services.direct_solvers import DirectSolver, TreeFactor, tree_factorize

logger = logging.getLogger(__name__)

_SOLVE_CHUNK = 256


def _same_vertices(G: WeightedGraph, H: WeightedGraph) -> None:
    if G.n != H.n:
        raise VertexMismatch(f"graphs on {G.n} and {H.n} vertices")


def _depths(factor: TreeFactor) -> np.ndarray:
    depth = np.zeros(factor.n, dtype=np.int64)
    for d, level in enumerate(factor.levels, start=1):
        depth[level] = d
    return depth


def root_resistances(factor: TreeFactor) -> np.ndarray:
    """Resistance from every vertex to the root along the tree."""
    res = np.zeros(factor.n)
    for level in factor.levels:
        res[level] = res[factor.parent[level]] + 1.0 / factor.weight[level]
    return res


def lowest_common_ancestors(factor: TreeFactor, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised binary-lifting LCA queries."""
    depth = _depths(factor)
    up0 = factor.parent.copy()
    up0[factor.ground] = factor.ground
    steps = max(1, int(depth.max()).bit_length())
    table = [up0]
    for _ in range(1, steps):
        prev = table[-1]
        table.append(prev[prev])

    x = np.asarray(a, dtype=np.int64).copy()
    y = np.asarray(b, dtype=np.int64).copy()
    swap = depth[x] < depth[y]
    x[swap], y[swap] = y[swap].copy(), x[swap].copy()
    diff = depth[x] - depth[y]
    for k in range(steps):
        move = ((diff >> k) & 1) == 1
        x[move] = table[k][x[move]]
    for k in reversed(range(steps)):
        jump = table[k][x] != table[k][y]
        x[jump] = table[k][x[jump]]
        y[jump] = table[k][y[jump]]
    return np.where(x == y, x, up0[x])


def tree_stretch_exact(G: WeightedGraph, T: WeightedGraph) -> StretchReport:
    _same_vertices(G, T)
    factor = tree_factorize(T)
    if G.m == 0:
        return StretchReport(value=0.0, method="exact-tree", per_edge=np.zeros(0))
    res = root_resistances(factor)
    lca = lowest_common_ancestors(factor, G.u, G.v)
    per_edge = G.w * (res[G.u] + res[G.v] - 2.0 * res[lca])
    return StretchReport(value=float(per_edge.sum()), method="exact-tree", per_edge=per_edge)


def _grounded_solver(H: WeightedGraph) -> DirectSolver:
    if not is_connected(H):
        raise DisconnectedGraph("preconditioner graph is not connected")
    return DirectSolver(laplacian_of(H).delete_index(H.n - 1))


def _incidence(G: WeightedGraph, columns: np.ndarray) -> sp.csc_matrix:
    """(n x k) signed incidence columns chi_u - chi_v for the selected edges."""
    k = columns.size
    rows = np.concatenate([G.u[columns], G.v[columns]])
    cols = np.concatenate([np.arange(k), np.arange(k)])
    vals = np.concatenate([np.ones(k), -np.ones(k)])
    return sp.csc_matrix((vals, (rows, cols)), shape=(G.n, k))


def generalized_stretch_exact(G: WeightedGraph, H: WeightedGraph) -> StretchReport:
    """sum_e w_e (chi_u - chi_v)^T L_H^+ (chi_u - chi_v), one grounded solve per edge of G."""
    _same_vertices(G, H)
    if not is_connected(G):
        raise DisconnectedGraph("graph is not connected")
    solver = _grounded_solver(H)
    per_edge = np.zeros(G.m)
    for start in range(0, G.m, _SOLVE_CHUNK):
        columns = np.arange(start, min(start + _SOLVE_CHUNK, G.m))
        rhs = _incidence(G, columns).toarray()[: G.n - 1]
        x = solver.solve(rhs)
        per_edge[columns] = G.w[columns] * np.einsum("ij,ij->j", rhs, x)
    return StretchReport(value=float(per_edge.sum()), method="exact-solve", per_edge=per_edge)


@dataclass(frozen=True, eq=False)
class ResistanceSketch:
    """Rows of Z = Q W^{1/2} B L^+ stored per vertex (n x k)."""

    Z: np.ndarray
    eps: float

    @property
    def k(self) -> int:
        return int(self.Z.shape[1])

    def query(self, u: int, v: int) -> float:
        d = self.Z[u] - self.Z[v]
        return float(d @ d)

    def query_many(self, u: Sequence[int] | np.ndarray, v: Sequence[int] | np.ndarray) -> np.ndarray:
        d = self.Z[np.asarray(u, dtype=np.int64)] - self.Z[np.asarray(v, dtype=np.int64)]
        return np.einsum("ij,ij->i", d, d)


def sketch_size(n: int, eps: float) -> int:
    constant = float(config.get("sketch.constant", 24.0))
    return max(1, math.ceil(constant * math.log(max(n, 2)) / (eps * eps)))


def approx_effective_resistances(H: WeightedGraph, eps: float, seed: int, stream: Tuple[int, ...] = ()) -> ResistanceSketch:
    if not 0.0 < eps < 1.0:
        raise InvalidParameter(f"sketch eps must lie in (0, 1), got {eps}")
    solver = _grounded_solver(H)
    k = sketch_size(H.n, eps)
    rng = generator(seed, 0x5E7C, *stream)
    signs = rng.integers(0, 2, size=(k, H.m)) * 2.0 - 1.0
    Q = signs / math.sqrt(k)
    # (Q W^{1/2} B)^T as an n x k block; columns sum to zero
    QW = Q * np.sqrt(H.w)
    Y = np.zeros((H.n, k))
    np.add.at(Y, H.u, QW.T)
    np.subtract.at(Y, H.v, QW.T)
    Z = np.zeros((H.n, k))
    for start in range(0, k, _SOLVE_CHUNK):
        stop = min(start + _SOLVE_CHUNK, k)
        Z[: H.n - 1, start:stop] = solver.solve(Y[: H.n - 1, start:stop])
    logger.debug("Resistance sketch n=%d m=%d k=%d", H.n, H.m, k)
    return ResistanceSketch(Z=Z, eps=eps)


def approx_stretch(G: WeightedGraph, H: WeightedGraph, eps: float, seed: int) -> StretchReport:
    _same_vertices(G, H)
    if not 0.0 < eps < 1.0:
        raise InvalidParameter(f"sketch eps must lie in (0, 1), got {eps}")
    sketch = approx_effective_resistances(H, eps, seed)
    per_edge = G.w * sketch.query_many(G.u, G.v)
    return StretchReport(value=float(per_edge.sum()), method="sketched", eps_sketch=eps, per_edge=per_edge)


def pld_bounds_from_stretch(pld_H: float, st: float, n: int, rtol: float = 1e-9) -> Tuple[float, float]:
    """(pld_H + ln(st - n + 2), pld_H + (n - 1) ln(st / (n - 1)))."""
    if n <= 1:
        return pld_H, pld_H
    floor = float(n - 1)
    if st < floor * (1.0 - rtol):
        raise StretchBelowMinimum(f"stretch {st!r} below n - 1 = {n - 1}")
    st = max(st, floor)
    lower = pld_H + math.log(st - n + 2.0)
    upper = pld_H + floor * math.log(st / floor)
    return lower, max(lower, upper)


__all__ = [
    "root_resistances",
    "lowest_common_ancestors",
    "tree_stretch_exact",
    "generalized_stretch_exact",
    "ResistanceSketch",
    "sketch_size",
    "approx_effective_resistances",
    "approx_stretch",
    "pld_bounds_from_stretch",
]
