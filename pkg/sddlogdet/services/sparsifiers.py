"""Preconditioner construction: spanning trees, sparsifiers and the chain.

Every graph built here keeps the vertex set of its input and contains a
spanning tree of it, so grounded Laplacians stay positive definite.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from sddlogdet.config.environments import config
from sddlogdet.core.errors import ChainStalled, DisconnectedGraph, InvalidParameter, SparsificationFailed
from sddlogdet.core.rng import generator
from sddlogdet.core.sparse import SymmetricSparse, WeightedGraph, graph_of, is_connected, laplacian_of
from sddlogdet.models.reports import StretchReport
from sddlogdet.services.direct_solvers import (
    DenseCholesky,
    DirectSolver,
    PartialCholesky,
    greedy_eliminate,
    pcg_solve,
    pencil_extremes,
    tree_factorize,
    tree_solve,
)
from sddlogdet.services.stretch import approx_effective_resistances, tree_stretch_exact
from sddlogdet.services.trace_estimator import CountingSolver

logger = logging.getLogger(__name__)

Certification = str


def _require_connected(G: WeightedGraph) -> None:
    if not is_connected(G):
        raise DisconnectedGraph("graph is not connected")


def _grounded(L: SymmetricSparse) -> SymmetricSparse:
    return L.delete_index(L.n - 1)


# ----- spanning trees -----


def _edge_index(G: WeightedGraph, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return np.searchsorted(G.u * G.n + G.v, lo * G.n + hi)


def _path_children(parent: np.ndarray, depth: np.ndarray, u: int, v: int) -> List[int]:
    """Vertices whose parent edge lies on the tree path u..v."""
    path: List[int] = []
    while depth[u] > depth[v]:
        path.append(u)
        u = int(parent[u])
    while depth[v] > depth[u]:
        path.append(v)
        v = int(parent[v])
    while u != v:
        path.extend((u, v))
        u, v = int(parent[u]), int(parent[v])
    return path


def _mask_from_pairs(G: WeightedGraph, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    mask = np.zeros(G.m, dtype=bool)
    mask[_edge_index(G, np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))] = True
    return mask


def _length_matrix(G: WeightedGraph, lengths: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix((lengths, (G.u, G.v)), shape=(G.n, G.n))


def _spanning_mask(G: WeightedGraph, seed: int, stream: Sequence[int]) -> np.ndarray:
    """Minimum-resistance spanning tree with randomised tie-breaking."""
    rng = generator(seed, 0x75EE, *stream)
    cost = (1.0 + 1e-9 * rng.random(G.m)) / G.w
    mst = csgraph.minimum_spanning_tree(_length_matrix(G, cost)).tocoo()
    return _mask_from_pairs(G, mst.row, mst.col)


def _shortest_path_mask(G: WeightedGraph, root: int, lengths: np.ndarray) -> np.ndarray:
    """Shortest-path tree from ``root`` under edge lengths (resistances)."""
    _, pred = csgraph.dijkstra(
        _length_matrix(G, lengths), directed=False, indices=root, return_predecessors=True
    )
    child = np.flatnonzero(pred >= 0)
    return _mask_from_pairs(G, child, pred[child])


def _central_vertex(G: WeightedGraph, lengths: np.ndarray) -> int:
    """Approximate centre by a double sweep: the vertex closest to both ends of a long path."""
    adj = _length_matrix(G, lengths)
    first = csgraph.dijkstra(adj, directed=False, indices=0)
    a = int(np.argmax(first))
    from_a = csgraph.dijkstra(adj, directed=False, indices=a)
    b = int(np.argmax(from_a))
    from_b = csgraph.dijkstra(adj, directed=False, indices=b)
    return int(np.argmin(np.maximum(from_a, from_b)))


def _pencil_top(G: WeightedGraph, mask: np.ndarray, seed: int, iterations: int) -> float:
    """Power-iteration estimate of the top eigenvalue of L_T^+ L_G."""
    if G.n <= 2:
        return 1.0
    T = G.subgraph(mask)
    factor = tree_factorize(T)
    F_G = _grounded(laplacian_of(G))
    F_T = _grounded(laplacian_of(T))
    x = generator(seed, 0x70E1).standard_normal(G.n - 1)
    top = 1.0
    for _ in range(iterations):
        y = tree_solve(factor, F_G.matvec(x))
        norm = np.linalg.norm(y)
        if norm == 0.0:
            break
        x = y / norm
        top = float(x @ F_G.matvec(x)) / float(x @ F_T.matvec(x))
    return top


def _candidate_masks(G: WeightedGraph, seed: int, stream: Sequence[int]) -> List[Tuple[str, np.ndarray]]:
    """The minimum-resistance tree and shortest-path trees from the centre and random roots."""
    rng = generator(seed, 0x75EF, *stream)
    lengths = 1.0 / G.w
    centre = _central_vertex(G, lengths)
    jitter = float(config.get("tree.jitter", 0.5))
    candidates = [
        ("mst", _spanning_mask(G, seed, stream)),
        ("spt-centre", _shortest_path_mask(G, centre, lengths)),
        ("spt-centre-jitter", _shortest_path_mask(G, centre, lengths * (1.0 + jitter * rng.random(G.m)))),
    ]
    for _ in range(int(config.get("tree.random_roots", 2))):
        root = int(rng.integers(0, G.n))
        candidates.append((f"spt-{root}", _shortest_path_mask(G, root, lengths * (1.0 + jitter * rng.random(G.m)))))
    return candidates


def _score(G: WeightedGraph, mask: np.ndarray, report: StretchReport, seed: int) -> float:
    # the top eigenvalue never exceeds the total stretch
    iterations = int(config.get("tree.score_iterations", 30))
    return min(_pencil_top(G, mask, seed, iterations), report.value)


def _best_candidate(
    G: WeightedGraph, seed: int, stream: Sequence[int]
) -> Tuple[np.ndarray, StretchReport, float]:
    """Candidate with the smallest top pencil eigenvalue; ties go to the smaller stretch."""
    best: Optional[Tuple[float, float, str, np.ndarray, StretchReport]] = None
    for name, mask in _candidate_masks(G, seed, stream):
        report = tree_stretch_exact(G, G.subgraph(mask))
        top = _score(G, mask, report, seed)
        logger.debug("Tree candidate %s: top=%.4e stretch=%.4e", name, top, report.value)
        if best is None or (top, report.value) < (best[0], best[1]):
            best = (top, report.value, name, mask, report)
    assert best is not None
    logger.debug("Chose tree candidate %s", best[2])
    return best[3], best[4], best[0]


def _low_stretch_mask(
    G: WeightedGraph, seed: int, max_swaps: Optional[int] = None, stream: Sequence[int] = ()
) -> Tuple[np.ndarray, StretchReport]:
    _require_connected(G)
    if G.m == G.n - 1:
        return np.ones(G.m, dtype=bool), tree_stretch_exact(G, G)
    mask, report, top = _best_candidate(G, seed, stream)
    per_edge = report.per_edge if report.per_edge is not None else np.zeros(G.m)
    cap = min(int(max_swaps if max_swaps is not None else config.get("tree.max_swaps", 32)), G.m)
    tried: set[int] = set()
    swaps = 0
    for _ in range(cap):
        off = np.flatnonzero(~mask)
        ranked = off[np.argsort(-per_edge[off], kind="stable")]
        candidate = next((int(e) for e in ranked if int(e) not in tried), None)
        if candidate is None:
            break
        tried.add(candidate)
        factor = tree_factorize(G.subgraph(mask))
        depth = np.zeros(G.n, dtype=np.int64)
        for d, level in enumerate(factor.levels, start=1):
            depth[level] = d
        path = _path_children(factor.parent, depth, int(G.u[candidate]), int(G.v[candidate]))
        # weakest link on the cycle: largest resistance
        child = max(path, key=lambda c: (1.0 / factor.weight[c], -c))
        drop = int(_edge_index(G, np.array([child]), np.array([factor.parent[child]]))[0])
        trial = mask.copy()
        trial[drop] = False
        trial[candidate] = True
        trial_report = tree_stretch_exact(G, G.subgraph(trial))
        if trial_report.value >= report.value:
            continue
        trial_top = _score(G, trial, trial_report, seed)
        if trial_top <= top:
            mask, report, top = trial, trial_report, trial_top
            per_edge = report.per_edge if report.per_edge is not None else per_edge
            swaps += 1
    logger.debug("Low-stretch tree n=%d m=%d stretch=%.4e swaps=%d", G.n, G.m, report.value, swaps)
    return mask, report


def low_stretch_tree(
    G: WeightedGraph, seed: int, max_swaps: Optional[int] = None, stream: Sequence[int] = ()
) -> Tuple[WeightedGraph, StretchReport]:
    """Spanning subtree of G (original weights) and its exact stretch st_T(G)."""
    mask, report = _low_stretch_mask(G, seed, max_swaps, stream)
    return G.subgraph(mask), report


# ----- sparsifiers -----


def sparsifier_sample_count(n: int, eps: float) -> int:
    constant = float(config.get("sparsify.constant", 9.0))
    return max(1, math.ceil(constant * n * math.log(max(n, 2)) / (eps * eps)))


def spectral_sparsify(G: WeightedGraph, eps: float, seed: int, stream: Sequence[int] = ()) -> WeightedGraph:
    """Sample q = ceil(9 n ln n / eps^2) edges with replacement, p_e ~ w_e R_e,
    each sample adding w_e / (q p_e); resampled until connected."""
    if not 0.0 < eps < 1.0:
        raise InvalidParameter(f"sparsifier eps must lie in (0, 1), got {eps}")
    _require_connected(G)
    if G.m <= 1:
        return G
    resistance_eps = float(config.get("sketch.resistance_eps", 0.5))
    sketch = approx_effective_resistances(G, resistance_eps, seed, tuple(stream) + (0x5A,))
    leverage = G.w * sketch.query_many(G.u, G.v)
    probs = leverage / leverage.sum()
    q = sparsifier_sample_count(G.n, eps)
    retries = int(config.get("sparsify.max_retries", 5))
    for attempt in range(retries):
        rng = generator(seed, 0x5BA5, *stream, attempt)
        counts = rng.multinomial(q, probs)
        keep = counts > 0
        weights = G.w[keep] * counts[keep] / (q * probs[keep])
        H = WeightedGraph.from_arrays(G.n, G.u[keep], G.v[keep], weights)
        if is_connected(H):
            logger.debug("Sparsifier n=%d: %d of %d edges from q=%d samples", G.n, H.m, G.m, q)
            return H
        logger.info("Sparsifier attempt %d disconnected, resampling", attempt + 1)
    raise SparsificationFailed(f"no connected sample after {retries} attempts")


@dataclass(frozen=True, eq=False)
class IncrementalSparsifier:
    graph: WeightedGraph  # rescaled so that L_G <= L_B <= kappa L_G
    tree: WeightedGraph
    tree_stretch: float
    sampled: int
    scale: float
    kappa: float
    certification: Certification
    pencil: Tuple[float, float]

    @property
    def kappa_bound(self) -> float:
        """kappa for sample plans: probe estimates are inflated."""
        if self.certification == "probe":
            return self.kappa * float(config.get("estimation.kappa_inflation", 2.0))
        return self.kappa


def incremental_sparsify(
    G: WeightedGraph,
    target_kappa: Optional[float] = None,
    seed: int = 0,
    t: Optional[int] = None,
    stream: Sequence[int] = (),
) -> IncrementalSparsifier:
    """Scaled low-stretch tree plus t off-tree edges sampled by stretch.

    The tree is scaled by s = ceil(sqrt(st_off ln n / t)); an off-tree edge
    sampled c times gets weight w_e c / (t p_e). The result is rescaled by the
    top eigenvalue of the pencil (L_G, L_B) so that L_G <= L_B, and kappa is
    the measured ratio of the pencil extremes.
    """
    target = float(target_kappa if target_kappa is not None else config.get("chain.target_kappa", 16.0))
    if not target > 1.0:
        raise InvalidParameter(f"target kappa must exceed 1, got {target}")
    mask, report = _low_stretch_mask(G, seed, stream=stream)
    tree = G.subgraph(mask)
    off = np.flatnonzero(~mask)
    if off.size == 0:
        return IncrementalSparsifier(
            graph=tree, tree=tree, tree_stretch=report.value, sampled=0, scale=1.0,
            kappa=1.0, certification="exact", pencil=(1.0, 1.0),
        )

    per_edge = report.per_edge if report.per_edge is not None else np.ones(G.m)
    st_off = float(per_edge[off].sum())
    ln_n = math.log(max(G.n, 2))
    if t is None:
        fraction = float(config.get("chain.sample_fraction", 0.125))
        t = min(math.ceil(st_off * ln_n / target), off.size, math.ceil(G.n * fraction))
    t = max(0, int(t))
    scale = float(max(1, math.ceil(math.sqrt(st_off * ln_n / max(t, 1)))))

    u = [tree.u]
    v = [tree.v]
    w = [tree.w * scale]
    if t > 0:
        probs = per_edge[off] / st_off
        counts = generator(seed, 0x1C5A, *stream).multinomial(t, probs)
        hit = counts > 0
        chosen = off[hit]
        u.append(G.u[chosen])
        v.append(G.v[chosen])
        w.append(G.w[chosen] * counts[hit] / (t * probs[hit]))
    raw = WeightedGraph.from_arrays(G.n, np.concatenate(u), np.concatenate(v), np.concatenate(w))

    F_A = _grounded(laplacian_of(G))
    F_B = _grounded(laplacian_of(raw))
    mu_min, mu_max, method = pencil_extremes(F_A, F_B, seed=seed)
    margin = 1e-9 if method == "dense" else float(config.get("chain.probe_margin", 0.05))
    rescale = mu_max * (1.0 + margin)
    kappa = max(rescale / (mu_min * (1.0 - margin if method != "dense" else 1.0)), 1.0)
    B = raw.scaled(rescale)
    logger.debug(
        "Incremental sparsifier n=%d t=%d s=%.0f pencil=[%.4e, %.4e] kappa=%.3f (%s)",
        G.n, t, scale, mu_min, mu_max, kappa, method,
    )
    return IncrementalSparsifier(
        graph=B,
        tree=tree,
        tree_stretch=report.value,
        sampled=t,
        scale=scale,
        kappa=kappa,
        certification=method,
        pencil=(mu_min, mu_max),
    )


# ----- chain -----


@dataclass(frozen=True, eq=False)
class ChainLevel:
    A: SymmetricSparse  # Laplacian A_i, ground last
    B: SymmetricSparse  # Laplacian B_i with A_i <= B_i <= kappa A_i
    partial: PartialCholesky  # of B_i, remaining = A_{i+1}
    sparsifier: IncrementalSparsifier

    @property
    def kappa(self) -> float:
        return self.sparsifier.kappa

    @property
    def kappa_bound(self) -> float:
        return self.sparsifier.kappa_bound

    @property
    def dim(self) -> int:
        return self.A.n

    @property
    def edges_A(self) -> int:
        return int((self.A.rows != self.A.cols).sum())

    @property
    def edges_B(self) -> int:
        return int((self.B.rows != self.B.cols).sum())


@dataclass(frozen=True, eq=False)
class PreconditionerChain:
    n: int
    levels: Tuple[ChainLevel, ...]
    base: SymmetricSparse  # final Laplacian A_d
    base_factor: DenseCholesky = field(repr=False)

    @property
    def pivot_logsum(self) -> float:
        return float(sum(level.partial.pivot_logsum for level in self.levels))

    @property
    def depth(self) -> int:
        return len(self.levels)

    def laplacian(self, i: int) -> SymmetricSparse:
        return self.levels[i].A if i < len(self.levels) else self.base

    def grounded(self, i: int) -> SymmetricSparse:
        return _grounded(self.laplacian(i))

    def inner_is_exact(self, i: int) -> bool:
        """Whether level i solves A_{i+1} exactly (base factor or sparse direct)."""
        if i + 1 >= len(self.levels):
            return True
        return self.laplacian(i + 1).n <= int(config.get("chain.direct_inner_max", 4000))

    def level_solver(self, i: int, nu: float) -> CountingSolver:
        """Solver for the grounded B_i: partial Cholesky of B_i, then A_{i+1}
        by the base factor, by a sparse direct factor when A_{i+1} has at most
        ``chain.direct_inner_max`` vertices, or else by PCG preconditioned with
        B_{i+1} over an exact coarse solve of A_{i+2}."""
        partial = self.levels[i].partial
        if self.inner_is_exact(i):
            inner = self.base_factor.solve if i + 1 >= len(self.levels) else DirectSolver(self.grounded(i + 1)).solve

            def exact(b: np.ndarray) -> Tuple[np.ndarray, bool]:
                return partial.solve(b, inner), True

            return CountingSolver(exact)

        nxt = self.levels[i + 1]
        F_next = self.grounded(i + 1)
        coarse = DirectSolver(self.grounded(i + 2))

        def precond(r: np.ndarray) -> np.ndarray:
            return nxt.partial.solve(r, coarse.solve)

        def solve(b: np.ndarray) -> Tuple[np.ndarray, bool]:
            converged: List[bool] = []

            def inner(r: np.ndarray) -> np.ndarray:
                result = pcg_solve(F_next, r, precond, nu, kappa=nxt.kappa_bound)
                converged.append(result.converged)
                return result.x

            x = partial.solve(b, inner)
            return x, all(converged)

        return CountingSolver(solve)

    def summary(self) -> List[Dict[str, Any]]:
        return [
            {
                "level": i,
                "dim": level.dim,
                "edges_A": level.edges_A,
                "edges_B": level.edges_B,
                "kappa": level.kappa,
                "certification": level.sparsifier.certification,
                "eliminated": level.partial.eliminated,
                "pivot_logsum": level.partial.pivot_logsum,
            }
            for i, level in enumerate(self.levels)
        ]


def chain_length_cap(n: int) -> int:
    slack = int(config.get("chain.length_slack", 10))
    return math.ceil(math.log2(max(n, 2))) + slack


def build_chain(
    G: WeightedGraph,
    seed: int,
    dense_threshold: Optional[int] = None,
    target_kappa: Optional[float] = None,
    stream: Sequence[int] = (),
) -> PreconditionerChain:
    """Alternate incremental sparsification and greedy elimination until the
    remaining Laplacian has fewer than ``dense_threshold`` vertices."""
    _require_connected(G)
    threshold = int(dense_threshold if dense_threshold is not None else config.get("solver.dense_threshold", 100))
    cap = chain_length_cap(G.n)
    A = laplacian_of(G)
    levels: List[ChainLevel] = []
    while A.n >= threshold:
        if len(levels) >= cap:
            raise ChainStalled(f"chain reached its length cap {cap} at dimension {A.n}")
        graph = G if not levels else graph_of(A)
        spars = incremental_sparsify(graph, target_kappa, seed, stream=tuple(stream) + (len(levels),))
        L_B = laplacian_of(spars.graph)
        partial = greedy_eliminate(L_B)
        if partial.eliminated == 0:
            logger.warning("Greedy elimination stalled at dimension %d; eliminating by minimum degree", A.n)
            partial = greedy_eliminate(L_B, fallback=True)
            if partial.eliminated == 0:
                raise ChainStalled(f"no vertex could be eliminated at dimension {A.n}")
        levels.append(ChainLevel(A=A, B=L_B, partial=partial, sparsifier=spars))
        logger.debug(
            "Chain level %d: dim %d -> %d, kappa=%.3f", len(levels) - 1, A.n, partial.remaining.n, spars.kappa
        )
        A = partial.remaining
    base_factor = DenseCholesky(_grounded(A)) if A.n > 1 else DenseCholesky(np.zeros((0, 0)))
    logger.info("Built chain of %d levels for n=%d, base dimension %d", len(levels), G.n, A.n)
    return PreconditionerChain(n=G.n, levels=tuple(levels), base=A, base_factor=base_factor)


__all__ = [
    "low_stretch_tree",
    "sparsifier_sample_count",
    "spectral_sparsify",
    "IncrementalSparsifier",
    "incremental_sparsify",
    "ChainLevel",
    "PreconditionerChain",
    "chain_length_cap",
    "build_chain",
]
