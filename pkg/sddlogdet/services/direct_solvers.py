"""Exact and iterative solvers for grounded Laplacians and SPD matrices.

Conventions:
  * A "grounded" system is a Laplacian on ``n`` vertices with the row and
    column of its ground vertex (always the last one) removed.
  * Every solver accepts a vector or a block of right-hand sides (columns).
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from sddlogdet.config.environments import config
from sddlogdet.core.errors import (
    DimensionMismatch,
    InvalidParameter,
    MaxIterationsExceeded,
    NotATree,
    NotPositiveDefinite,
)
from sddlogdet.core.rng import generator
from sddlogdet.core.sparse import SymmetricSparse, WeightedGraph, check_laplacian, is_connected, laplacian_of
from sddlogdet.telemetry.error_handler import default_error_handler

logger = logging.getLogger(__name__)

Solver = Callable[[np.ndarray], np.ndarray]
Operator = Union[SymmetricSparse, Callable[[np.ndarray], np.ndarray]]


def _as_dense(A: Union[SymmetricSparse, np.ndarray]) -> np.ndarray:
    return A.to_dense() if isinstance(A, SymmetricSparse) else np.asarray(A, dtype=np.float64)


def _apply(op: Operator, x: np.ndarray) -> np.ndarray:
    return op.matvec(x) if isinstance(op, SymmetricSparse) else op(x)


# ----- dense -----


class DenseCholesky:
    """Dense Cholesky factor of a small SPD matrix."""

    def __init__(self, A: Union[SymmetricSparse, np.ndarray]) -> None:
        dense = _as_dense(A)
        self.n = dense.shape[0]
        if self.n == 0:
            self._factor = None
            self.logdet = 0.0
            return
        try:
            self._factor = la.cho_factor(dense, lower=True, check_finite=False)
        except la.LinAlgError as exc:
            raise NotPositiveDefinite(f"dense Cholesky failed: {exc}") from exc
        diag = np.diag(self._factor[0])
        if np.any(~(diag > 0)):
            raise NotPositiveDefinite("nonpositive pivot in dense Cholesky")
        self.logdet = float(2.0 * np.sum(np.log(diag)))

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._factor is None:
            return np.zeros_like(b, dtype=np.float64)
        return la.cho_solve(self._factor, b, check_finite=False)

    __call__ = solve


def dense_logdet(A: Union[SymmetricSparse, np.ndarray]) -> float:
    """ln det A by dense Cholesky; raises NotPositiveDefinite."""
    return DenseCholesky(A).logdet


def dense_pld(L: Union[SymmetricSparse, np.ndarray], rtol: float = 1e-9) -> float:
    """Sum of the logs of the positive eigenvalues (test oracle)."""
    eig = la.eigvalsh(_as_dense(L))
    if eig.size == 0:
        return 0.0
    positive = eig[eig > rtol * max(float(eig.max()), 0.0)]
    return float(np.sum(np.log(positive)))


class DirectSolver:
    """SuperLU factorization of a sparse SPD matrix."""

    def __init__(self, F: SymmetricSparse) -> None:
        self.n = F.n
        self._lu = None
        if self.n == 0:
            return
        try:
            self._lu = splu(F.csr.tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise NotPositiveDefinite(f"sparse factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros_like(b, dtype=np.float64)
        return self._lu.solve(np.asarray(b, dtype=np.float64))

    __call__ = solve


def sparse_direct_solver(F: SymmetricSparse) -> DirectSolver:
    return DirectSolver(F)


# ----- trees -----


@dataclass(frozen=True, eq=False)
class TreeFactor:
    """LDL^T factor of a grounded tree Laplacian in parent-pointer form.

    Eliminating leaves first, the pivot of vertex v equals the weight of the
    edge to its parent and the unit-lower factor has -1 at (parent(v), v).
    """

    n: int
    ground: int
    parent: np.ndarray
    weight: np.ndarray  # weight of the edge to the parent, 0 at the ground
    order: np.ndarray  # elimination order, leaves first
    levels: Tuple[np.ndarray, ...] = field(repr=False)  # vertices by depth 1..max

    @property
    def pivots(self) -> np.ndarray:
        return self.weight[self.order]

    @property
    def logdet(self) -> float:
        """log det of the grounded tree Laplacian."""
        return float(np.sum(np.log(self.pivots)))

    @property
    def pld(self) -> float:
        return math.log(self.n) + self.logdet

    @cached_property
    def scatter(self) -> Tuple[Tuple[np.ndarray, sp.csr_matrix], ...]:
        """Per level: the distinct parents and the 0/1 matrix summing children into them."""
        out = []
        for level in self.levels:
            targets, inverse = np.unique(self.parent[level], return_inverse=True)
            M = sp.csr_matrix(
                (np.ones(level.size), (inverse.ravel(), np.arange(level.size))), shape=(targets.size, level.size)
            )
            out.append((targets, M))
        return tuple(out)


def tree_factorize(T: WeightedGraph, ground: Optional[int] = None) -> TreeFactor:
    g = T.n - 1 if ground is None else int(ground)
    if T.n == 0 or T.m != T.n - 1 or not is_connected(T):
        raise NotATree(f"graph with {T.n} vertices and {T.m} edges is not a spanning tree")
    order, pred = csgraph.breadth_first_order(T.adjacency, g, directed=False, return_predecessors=True)
    parent = np.asarray(pred, dtype=np.int64)
    parent[g] = -1
    depth = np.zeros(T.n, dtype=np.int64)
    for v in order[1:]:
        depth[v] = depth[parent[v]] + 1
    children = order[1:]
    weight = np.zeros(T.n)
    if children.size:
        weight[children] = np.asarray(T.adjacency[children, parent[children]]).ravel()
    max_depth = int(depth.max()) if T.n else 0
    by_depth = [np.flatnonzero(depth == d) for d in range(1, max_depth + 1)]
    elimination = np.asarray(order[1:][::-1], dtype=np.int64)
    logger.debug("Tree factor n=%d depth=%d", T.n, max_depth)
    return TreeFactor(
        n=T.n,
        ground=g,
        parent=parent,
        weight=weight,
        order=elimination,
        levels=tuple(by_depth),
    )


def tree_solve(F: TreeFactor, b: np.ndarray, full: bool = False) -> np.ndarray:
    """Solve with the grounded tree Laplacian.

    With ``full=False`` ``b`` lives on the n-1 non-ground vertices (in vertex
    order). With ``full=True`` ``b`` has length n, should be orthogonal to the
    all-ones vector, and the mean-free solution of L_T x = b is returned.
    """
    arr = np.asarray(b, dtype=np.float64)
    expected = F.n if full else F.n - 1
    if arr.shape[0] != expected or arr.ndim > 2:
        raise DimensionMismatch(f"right-hand side of length {arr.shape[0]}, expected {expected}")
    keep = np.delete(np.arange(F.n), F.ground)
    acc = np.zeros((F.n,) + arr.shape[1:])
    if full:
        acc[:] = arr
        acc[F.ground] = 0.0
    else:
        acc[keep] = arr
    # forward: subtree sums, deepest level first
    for level, (targets, M) in zip(reversed(F.levels), reversed(F.scatter)):
        acc[targets] += M @ acc[level]
    x = np.zeros_like(acc)
    w = F.weight.reshape((-1,) + (1,) * (acc.ndim - 1))
    for level in F.levels:
        x[level] = acc[level] / w[level] + x[F.parent[level]]
    if full:
        return x - x.mean(axis=0)
    return x[keep]


def tree_multiply(T: WeightedGraph, x: np.ndarray, ground: Optional[int] = None) -> np.ndarray:
    """Product with the grounded tree Laplacian."""
    g = T.n - 1 if ground is None else ground
    return laplacian_of(T).delete_index(g).matvec(x)


# ----- partial Cholesky -----


@dataclass(frozen=True, eq=False)
class PartialCholesky:
    """Greedy elimination of low-degree vertices of a Laplacian.

    The factorization is stored as dependency levels: vertices in one level
    never touch each other, so forward and backward substitution run one
    sparse product per level.
    """

    n: int
    ground: int
    order: np.ndarray
    pivots: np.ndarray  # aligned with order
    remaining: SymmetricSparse  # Laplacian on remaining_vertices, ground last
    remaining_vertices: np.ndarray
    levels: Tuple[Tuple[np.ndarray, sp.csr_matrix], ...] = field(repr=False)
    fallback_steps: int = 0

    @property
    def eliminated(self) -> int:
        return int(self.order.size)

    @property
    def pivot_logsum(self) -> float:
        return float(np.sum(np.log(self.pivots))) if self.pivots.size else 0.0

    @property
    def vertex_map(self) -> np.ndarray:
        return self.remaining_vertices

    @cached_property
    def compact_levels(self) -> Tuple[Tuple[np.ndarray, np.ndarray, sp.csr_matrix], ...]:
        """(eliminated vertices, touched vertices, coefficients restricted to them) per level."""
        out = []
        for vertices, M in self.levels:
            targets = np.unique(M.tocoo().row)
            out.append((vertices, targets, sp.csr_matrix(M[targets])))
        return tuple(out)

    def solve(self, b: np.ndarray, inner: Optional[Solver]) -> np.ndarray:
        """Solve with the grounded parent matrix, given an exact or approximate
        solver ``inner`` for the grounded remaining Laplacian."""
        arr = np.asarray(b, dtype=np.float64)
        if arr.shape[0] != self.n - 1:
            raise DimensionMismatch(f"right-hand side of length {arr.shape[0]}, expected {self.n - 1}")
        acc = np.zeros((self.n,) + arr.shape[1:])
        acc[: self.n - 1] = arr
        pivots = np.zeros(self.n)
        pivots[self.order] = self.pivots
        pivots = pivots.reshape((-1,) + (1,) * (arr.ndim - 1))
        for vertices, targets, M in self.compact_levels:
            acc[targets] += M @ acc[vertices]
        x = np.zeros_like(acc)
        rest = self.remaining_vertices[:-1]
        if rest.size:
            if inner is None:
                raise InvalidParameter("an inner solver is required for a non-empty remainder")
            x[rest] = inner(acc[rest])
        x[self.ground] = 0.0
        for vertices, targets, M in reversed(self.compact_levels):
            x[vertices] = acc[vertices] / pivots[vertices] + M.T @ x[targets]
        return x[: self.n - 1]


def greedy_eliminate(L: SymmetricSparse, fallback: bool = False) -> PartialCholesky:
    """Pivot out degree-1 and degree-2 vertices until every non-ground vertex
    has degree >= 3 or at most one vertex is left.

    The ground (last) vertex is never eliminated. With ``fallback`` a single
    minimum-degree vertex is eliminated when the greedy rule finds nothing.
    """
    check_laplacian(L)
    n = L.n
    ground = n - 1
    adj: List[Dict[int, float]] = [dict() for _ in range(n)]
    r, c, v = L.off_diagonal()
    for a, b, w in zip(r.tolist(), c.tolist(), (-v).tolist()):
        if w > 0:
            adj[a][b] = adj[a].get(b, 0.0) + w
            adj[b][a] = adj[b].get(a, 0.0) + w

    alive = np.ones(n, dtype=bool)
    touch = np.zeros(n, dtype=np.int64)
    order: List[int] = []
    pivots: List[float] = []
    level_of: List[int] = []
    contrib: List[List[Tuple[int, float]]] = []

    def eliminate(vertex: int) -> None:
        nbrs = adj[vertex]
        pivot = sum(nbrs.values())
        if not pivot > 0:
            raise NotPositiveDefinite(f"vertex {vertex} has no remaining edges")
        items = sorted(nbrs.items())
        for u, w in items:
            del adj[u][vertex]
        for i, (a, wa) in enumerate(items):
            for b, wb in items[i + 1 :]:
                merged = wa * wb / pivot
                adj[a][b] = adj[a].get(b, 0.0) + merged
                adj[b][a] = adj[b].get(a, 0.0) + merged
        lvl = int(touch[vertex])
        for u, _ in items:
            touch[u] = max(touch[u], lvl + 1)
        adj[vertex] = {}
        alive[vertex] = False
        order.append(vertex)
        pivots.append(pivot)
        level_of.append(lvl)
        contrib.append([(u, w / pivot) for u, w in items])

    fallback_steps = 0
    queue = deque(i for i in range(n - 1) if len(adj[i]) <= 2)
    while True:
        while queue and n - len(order) > 1:
            vertex = queue.popleft()
            if not alive[vertex] or len(adj[vertex]) > 2:
                continue
            nbrs = list(adj[vertex])
            eliminate(vertex)
            for u in nbrs:
                if u != ground and alive[u] and len(adj[u]) <= 2:
                    queue.append(u)
        if not fallback or n - len(order) <= 1 or order:
            break
        candidates = [i for i in range(n - 1) if alive[i]]
        if not candidates:
            break
        vertex = min(candidates, key=lambda i: (len(adj[i]), i))
        nbrs = list(adj[vertex])
        eliminate(vertex)
        fallback_steps += 1
        logger.debug("Fallback elimination of vertex %d (degree %d)", vertex, len(nbrs))
        queue.extend(u for u in nbrs if u != ground and alive[u] and len(adj[u]) <= 2)

    remaining_vertices = np.flatnonzero(alive)
    mapping = np.full(n, -1, dtype=np.int64)
    mapping[remaining_vertices] = np.arange(remaining_vertices.size)
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    for a in remaining_vertices.tolist():
        deg = 0.0
        for b, w in adj[a].items():
            deg += w
            if a < b:
                rows.append(int(mapping[a]))
                cols.append(int(mapping[b]))
                vals.append(-w)
        rows.append(int(mapping[a]))
        cols.append(int(mapping[a]))
        vals.append(deg)
    remaining = SymmetricSparse.from_arrays(int(remaining_vertices.size), rows, cols, vals)

    order_arr = np.asarray(order, dtype=np.int64)
    level_arr = np.asarray(level_of, dtype=np.int64)
    levels = []
    if order:
        for lvl in range(int(level_arr.max()) + 1):
            positions = np.flatnonzero(level_arr == lvl)
            if positions.size == 0:
                continue
            mr: List[int] = []
            mc: List[int] = []
            mv: List[float] = []
            for j, pos in enumerate(positions.tolist()):
                for u, coeff in contrib[pos]:
                    mr.append(u)
                    mc.append(j)
                    mv.append(coeff)
            M = sp.csr_matrix((mv, (mr, mc)), shape=(n, positions.size))
            levels.append((order_arr[positions], M))
    logger.debug(
        "Greedy elimination: %d of %d vertices eliminated in %d levels, %d remain",
        len(order),
        n,
        len(levels),
        remaining_vertices.size,
    )
    return PartialCholesky(
        n=n,
        ground=ground,
        order=order_arr,
        pivots=np.asarray(pivots, dtype=np.float64),
        remaining=remaining,
        remaining_vertices=remaining_vertices,
        levels=tuple(levels),
        fallback_steps=fallback_steps,
    )


# ----- iterative -----


@dataclass(frozen=True, eq=False)
class PcgResult:
    x: np.ndarray
    iterations: int
    converged: bool
    bound: float  # largest certified relative energy-norm error over columns


def pcg_max_iterations(kappa: float, nu: float) -> int:
    factor = float(config.get("solver.pcg_iteration_factor", 10.0))
    base = int(config.get("solver.pcg_iteration_base", 100))
    return int(math.ceil(factor * math.sqrt(max(kappa, 1.0)) * math.log(1.0 / nu) + base))


def pcg_solve(
    F_B: Operator,
    b: np.ndarray,
    precond: Optional[Solver],
    nu: float,
    kappa: Optional[float] = None,
    max_iter: Optional[int] = None,
    strict: bool = False,
) -> PcgResult:
    """Preconditioned CG with an energy-norm error certificate.

    Column j stops once sqrt(kappa) * ||r||_{M^-1} / ||b||_{M^-1} <= nu / 2,
    which bounds ||x - F^-1 b||_F by nu ||F^-1 b||_F when kappa bounds the
    condition number of the preconditioned operator. ``kappa`` is estimated
    when not given.
    """
    if not 0.0 < nu < 1.0:
        raise InvalidParameter(f"nu must lie in (0, 1), got {nu}")
    arr = np.asarray(b, dtype=np.float64)
    vector = arr.ndim == 1
    B = arr.reshape(arr.shape[0], -1)
    M = precond if precond is not None else (lambda r: r)

    x = np.zeros_like(B)
    r = B.copy()
    z = np.asarray(M(r)).reshape(B.shape)
    rz = np.einsum("ij,ij->j", r, z)
    bnorm2 = rz.copy()
    active = bnorm2 > 0.0
    if not active.any():
        out = x[:, 0] if vector else x
        return PcgResult(x=out, iterations=0, converged=True, bound=0.0)

    if kappa is None:
        kappa = estimate_condition_number(F_B, precond=precond, n=B.shape[0])
    limit = max_iter if max_iter is not None else pcg_max_iterations(kappa, nu)
    target = 0.5 * nu / math.sqrt(kappa)
    ratio = np.zeros(B.shape[1])
    ratio[active] = 1.0

    p = z.copy()
    iterations = 0
    while active.any() and iterations < limit:
        iterations += 1
        cols = np.flatnonzero(active)
        Ap = np.asarray(_apply(F_B, p[:, cols])).reshape(B.shape[0], cols.size)
        pAp = np.einsum("ij,ij->j", p[:, cols], Ap)
        alpha = np.where(pAp > 0, rz[cols] / np.where(pAp > 0, pAp, 1.0), 0.0)
        x[:, cols] += alpha * p[:, cols]
        r[:, cols] -= alpha * Ap
        z_cols = np.asarray(M(r[:, cols])).reshape(B.shape[0], cols.size)
        rz_new = np.einsum("ij,ij->j", r[:, cols], z_cols)
        ratio[cols] = np.sqrt(np.maximum(rz_new, 0.0) / bnorm2[cols])
        beta = np.where(rz[cols] > 0, rz_new / np.where(rz[cols] > 0, rz[cols], 1.0), 0.0)
        p[:, cols] = z_cols + beta * p[:, cols]
        rz[cols] = rz_new
        done = (ratio[cols] <= target) | (pAp <= 0)
        active[cols[done]] = False

    bound = float(ratio.max() * math.sqrt(kappa))
    converged = not active.any()
    out = x[:, 0] if vector else x
    if not converged:
        message = f"PCG stopped after {iterations} iterations with certified error {bound:.3e} > {nu:.3e}"
        if strict:
            raise MaxIterationsExceeded(message, best=out, iterations=iterations)
        logger.warning(message)
        default_error_handler.handle_solver_error(
            MaxIterationsExceeded(message, best=None, iterations=iterations), component="pcg"
        )
    return PcgResult(x=out, iterations=iterations, converged=converged, bound=bound)


def _random_start(n: int, seed: int) -> np.ndarray:
    x = generator(seed, 0xC0DE).standard_normal(n)
    return x / np.linalg.norm(x)


def estimate_condition_number(
    F: Operator,
    solver: Optional[Solver] = None,
    precond: Optional[Solver] = None,
    iterations: Optional[int] = None,
    safety: Optional[float] = None,
    seed: int = 0,
    n: Optional[int] = None,
) -> float:
    """Power-iteration estimate of the condition number of F (or of M^-1 F).

    λ_max by power iteration, λ_min by inverse iteration through ``solver``
    when one is given, otherwise by shifted power iteration. The ratio is
    multiplied by ``safety`` (default 2).
    """
    its = int(iterations if iterations is not None else config.get("solver.condition_iterations", 50))
    factor = float(safety if safety is not None else config.get("solver.condition_safety", 2.0))
    dim = F.n if isinstance(F, SymmetricSparse) else int(n or 0)
    if dim == 0:
        raise InvalidParameter("dimension required for operator input")
    if dim == 1:
        return factor

    def op(x: np.ndarray) -> np.ndarray:
        y = _apply(F, x)
        return precond(y) if precond is not None else y

    def rayleigh(x: np.ndarray, y: np.ndarray) -> float:
        if precond is None:
            return float(x @ y)
        # M^-1 F is self-adjoint in the F inner product
        Fx = _apply(F, x)
        return float((Fx @ y) / (Fx @ x))

    x = _random_start(dim, seed)
    lam_max = 0.0
    for _ in range(its):
        y = op(x)
        lam_max = rayleigh(x, y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            break
        x = y / norm

    if solver is not None:
        x = _random_start(dim, seed + 1)
        mu = 0.0
        for _ in range(its):
            y = solver(x)
            mu = float(x @ y)
            norm = np.linalg.norm(y)
            if norm == 0.0:
                break
            x = y / norm
        lam_min = 1.0 / mu if mu > 0 else lam_max
    else:
        # eigenvalues of lam_max*I - op are lam_max - lam_i >= 0
        shift = lam_max
        x = _random_start(dim, seed + 1)
        top = 0.0
        for _ in range(its):
            y = shift * x - op(x)
            top = rayleigh(x, y)
            norm = np.linalg.norm(y)
            if norm == 0.0:
                break
            x = y / norm
        lam_min = max(shift - top, lam_max * 1e-16)
    if not lam_min > 0:
        raise NotPositiveDefinite("nonpositive eigenvalue estimate")
    kappa = factor * max(lam_max / lam_min, 1.0)
    logger.debug("Condition estimate lam_max=%.4e lam_min=%.4e kappa=%.4e", lam_max, lam_min, kappa)
    return kappa


def pencil_extremes(
    F_A: SymmetricSparse,
    F_B: SymmetricSparse,
    dense_max: Optional[int] = None,
    seed: int = 0,
    tol: Optional[float] = None,
) -> Tuple[float, float, str]:
    """Extreme eigenvalues of the pencil (F_A, F_B): returns (λ_min, λ_max, method)."""
    if F_A.n != F_B.n:
        raise DimensionMismatch(f"pencil of sizes {F_A.n} and {F_B.n}")
    limit = int(dense_max if dense_max is not None else config.get("chain.certify_dense_max", 600))
    if F_A.n == 0:
        return 1.0, 1.0, "exact"
    if F_A.n <= max(limit, 2):
        try:
            eig = la.eigh(F_A.to_dense(), F_B.to_dense(), eigvals_only=True)
        except la.LinAlgError as exc:
            raise NotPositiveDefinite(f"pencil is not definite: {exc}") from exc
        return float(eig[0]), float(eig[-1]), "dense"

    probe_tol = float(tol if tol is not None else config.get("solver.probe_tol", 1e-8))
    solve_a = DirectSolver(F_A)
    solve_b = DirectSolver(F_B)
    n = F_A.n
    v0 = generator(seed, 0x9E11).standard_normal(n)
    Minv_b = LinearOperator((n, n), matvec=solve_b.solve, dtype=np.float64)
    Minv_a = LinearOperator((n, n), matvec=solve_a.solve, dtype=np.float64)
    top = eigsh(F_A.csr, k=1, M=F_B.csr, Minv=Minv_b, which="LA", v0=v0, tol=probe_tol, return_eigenvectors=False)
    inv = eigsh(F_B.csr, k=1, M=F_A.csr, Minv=Minv_a, which="LA", v0=v0, tol=probe_tol, return_eigenvectors=False)
    return float(1.0 / inv[0]), float(top[0]), "probe"


__all__ = [
    "Solver",
    "DenseCholesky",
    "dense_logdet",
    "dense_pld",
    "DirectSolver",
    "sparse_direct_solver",
    "TreeFactor",
    "tree_factorize",
    "tree_solve",
    "tree_multiply",
    "PartialCholesky",
    "greedy_eliminate",
    "PcgResult",
    "pcg_max_iterations",
    "pcg_solve",
    "estimate_condition_number",
    "pencil_extremes",
]
