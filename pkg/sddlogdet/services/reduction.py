"""Kelner reduction of SDD matrices to Laplacians, and grounding of Laplacians.

For an SDD matrix A split as A = D1 + A_p + A_n + D2 (positive off-diagonals,
negative off-diagonals, the diagonal part that makes D1 + A_n - A_p a
Laplacian, and the non-negative excess D2) the two Laplacians

    L_hat   = D1 + A_n - A_p                               (n x n)
    L_tilde = [[D1 + D2/2 + A_n, -D2/2 - A_p],
               [-D2/2 - A_p,     D1 + D2/2 + A_n]]         (2n x 2n)

satisfy log|A| = pld(L_tilde) - pld(L_hat).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from sddlogdet.core.errors import DisconnectedGraph, IndexOutOfRange, NotSDD
from sddlogdet.core.sparse import (
    SymmetricSparse,
    check_laplacian,
    connected_components,
    graph_of,
    is_sdd,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KelnerParts:
    D1: SymmetricSparse
    D2: SymmetricSparse
    A_p: SymmetricSparse
    A_n: SymmetricSparse

    def reassemble(self) -> SymmetricSparse:
        return self.D1 + self.A_p + self.A_n + self.D2


@dataclass(frozen=True, eq=False)
class KelnerPair:
    L_tilde: SymmetricSparse
    L_hat: SymmetricSparse
    parts: KelnerParts


@dataclass(frozen=True, eq=False)
class GroundedMatrix:
    F: SymmetricSparse
    ground_vertex: int
    parent_n: int


def kelner_reduce(A: SymmetricSparse) -> KelnerPair:
    check = is_sdd(A)
    if not check:
        worst = int(np.argmin(check.slack))
        raise NotSDD(f"row {worst} violates diagonal dominance by {-check.slack[worst]!r}")
    n = A.n
    r, c, v = A.off_diagonal()
    pos = v > 0
    absrow = np.zeros(n)
    np.add.at(absrow, r, np.abs(v))
    np.add.at(absrow, c, np.abs(v))
    d1 = absrow
    # is_sdd tolerates ulp-level negative slack
    d2 = np.maximum(A.diagonal - d1, 0.0)

    idx = np.arange(n)
    D1 = SymmetricSparse.from_arrays(n, idx, idx, d1)
    D2 = SymmetricSparse.from_arrays(n, idx, idx, d2)
    A_p = SymmetricSparse.from_arrays(n, r[pos], c[pos], v[pos])
    A_n = SymmetricSparse.from_arrays(n, r[~pos], c[~pos], v[~pos])

    L_hat = SymmetricSparse.from_arrays(
        n,
        np.concatenate([idx, r]),
        np.concatenate([idx, c]),
        np.concatenate([d1, -np.abs(v)]),
    )

    block_diag = d1 + 0.5 * d2
    rp, cp, vp = r[pos], c[pos], v[pos]
    rn, cn, vn = r[~pos], c[~pos], v[~pos]
    rows = [idx, idx + n, rn, rn + n, idx, rp, cp]
    cols = [idx, idx + n, cn, cn + n, idx + n, cp + n, rp + n]
    vals = [block_diag, block_diag, vn, vn, -0.5 * d2, -vp, -vp]
    L_tilde = SymmetricSparse.from_arrays(
        2 * n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    )
    logger.debug(
        "Kelner reduction n=%d: %d positive and %d negative off-diagonals",
        n,
        int(pos.sum()),
        int((~pos).sum()),
    )
    return KelnerPair(L_tilde=L_tilde, L_hat=L_hat, parts=KelnerParts(D1=D1, D2=D2, A_p=A_p, A_n=A_n))


def float_laplacian(L: SymmetricSparse, ground: Optional[int] = None) -> GroundedMatrix:
    """Delete row/column ``ground`` (default: the last vertex) of a connected Laplacian."""
    g = L.n - 1 if ground is None else int(ground)
    if not 0 <= g < L.n:
        raise IndexOutOfRange(f"ground vertex {g} outside [0, {L.n})")
    G = graph_of(L)
    labels = connected_components(G)
    if labels.size and labels.max() > 0:
        raise DisconnectedGraph(
            f"Laplacian has {int(labels.max()) + 1} components", components=int(labels.max()) + 1
        )
    return GroundedMatrix(F=L.delete_index(g), ground_vertex=g, parent_n=L.n)


def pld_of_laplacian(L: SymmetricSparse, logdet_F: float) -> float:
    """pld(L) = ln n + log det F_L for a connected Laplacian (matrix-tree identity)."""
    return math.log(L.n) + logdet_F if L.n > 0 else 0.0


def laplacian_components(L: SymmetricSparse) -> List[Tuple[np.ndarray, SymmetricSparse]]:
    """Connected components of a Laplacian as (vertex ids, principal sub-Laplacian)."""
    check_laplacian(L)
    labels = connected_components(graph_of(L))
    count = int(labels.max()) + 1 if labels.size else 0
    parts = []
    for k in range(count):
        vertices = np.flatnonzero(labels == k)
        parts.append((vertices, L.principal(vertices)))
    return parts


__all__ = [
    "KelnerParts",
    "KelnerPair",
    "GroundedMatrix",
    "kelner_reduce",
    "float_laplacian",
    "pld_of_laplacian",
    "laplacian_components",
]
