"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from the user seed plus a tuple of integer labels, so sample ``j`` of
stream ``(seed, labels)`` is the same no matter which worker draws it.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, np.integer]


def child_seed(seed: SeedLike, *keys: int) -> int:
    """Mix a seed with integer labels into a 64-bit stream id."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def philox(stream: int, counter: int = 0) -> np.random.Generator:
    key = (int(stream) << 64) | (int(counter) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def sample_generator(seed: SeedLike, labels: Sequence[int], j: int) -> np.random.Generator:
    """Generator for sample ``j`` of the stream named by ``labels``."""
    return philox(child_seed(seed, *labels), j)


def generator(seed: SeedLike, *labels: int) -> np.random.Generator:
    return philox(child_seed(seed, *labels), 0)


def pairwise_sum(values: np.ndarray) -> float:
    """Fixed-shape pairwise reduction; result depends only on ``values``."""
    acc = np.asarray(values, dtype=np.float64).ravel().copy()
    if acc.size == 0:
        return 0.0
    while acc.size > 1:
        if acc.size % 2:
            acc = np.append(acc, 0.0)
        acc = acc[0::2] + acc[1::2]
    return float(acc[0])


__all__ = ["child_seed", "philox", "sample_generator", "generator", "pairwise_sum"]
