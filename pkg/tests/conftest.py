import sys

import numpy as np
import pytest

from rakingratio.appendix import a1_grid, a1_targets, a2_function, a2_grid
from rakingratio.measures import CellGrid, Partition, PiecewiseFunction


def random_grid(rng, sizes=(3, 2), zero_frac=0.0):
    """Full product grid with random positive cell probabilities."""
    parts = [Partition(chr(65 + i), tuple(f"{chr(65 + i)}{j}" for j in range(s)))
             for i, s in enumerate(sizes)]
    codes = np.array(np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")).reshape(
        len(sizes), -1).T
    p = rng.uniform(0.2, 1.0, len(codes))
    if zero_frac:
        p[rng.random(len(p)) < zero_frac] = 0.0
    return CellGrid(parts, codes, p / p.sum())


def random_function(rng, grid, name="f", noisy=True):
    mean = rng.uniform(-1, 1, grid.n_cells)
    var = rng.uniform(0, 0.5, grid.n_cells) if noisy else None
    return PiecewiseFunction(mean, var, name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def a1():
    grid = a1_grid()
    return grid, a1_targets(grid)


@pytest.fixture
def a2():
    return a2_grid(), a2_function()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
