from __future__ import annotations

import logging
from types import SimpleNamespace

import numpy as np
import pytest

from sddlogdet.config.environments import config as runtime_config
from sddlogdet.core.sparse import SymmetricSparse, WeightedGraph, laplacian_of
from sddlogdet.telemetry.error_handler import default_error_handler


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-size tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-size run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _fresh_state():
    snapshot = runtime_config.snapshot()
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    default_error_handler.reset()
    yield
    runtime_config.config = snapshot
    # the CLI replaces root handlers
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def path_graph(n: int, w: float = 1.0) -> WeightedGraph:
    u = np.arange(n - 1)
    return WeightedGraph.from_arrays(n, u, u + 1, np.full(n - 1, w))


def triangle() -> WeightedGraph:
    return WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])


def random_connected_graph(rng: np.random.Generator, n: int, extra: int) -> WeightedGraph:
    """Random recursive tree plus ``extra`` random chords, weights in [0.5, 2]."""
    u = [int(rng.integers(0, i)) for i in range(1, n)]
    v = list(range(1, n))
    for _ in range(extra):
        a, b = rng.choice(n, size=2, replace=False)
        u.append(int(a))
        v.append(int(b))
    w = rng.uniform(0.5, 2.0, size=len(u))
    return WeightedGraph.from_arrays(n, u, v, w)


def random_sdd(rng: np.random.Generator, n: int, density: float = 0.2, excess: float = 0.5) -> SymmetricSparse:
    """Random invertible SDD matrix with mixed-sign off-diagonals."""
    dense = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                dense[i, j] = dense[j, i] = rng.uniform(-1.0, 1.0)
    np.fill_diagonal(dense, np.abs(dense).sum(axis=1) + rng.uniform(0.1, excess, size=n))
    return SymmetricSparse.from_dense(dense)


def grid_plus_shift(rows: int, cols: int, shift: float) -> SymmetricSparse:
    from sddlogdet.services.generators import generate

    return generate("grid", (rows, cols), shift=shift)


@pytest.fixture
def helpers():
    return SimpleNamespace(
        path_graph=path_graph,
        triangle=triangle,
        random_connected_graph=random_connected_graph,
        random_sdd=random_sdd,
        grid_plus_shift=grid_plus_shift,
        laplacian_of=laplacian_of,
    )
