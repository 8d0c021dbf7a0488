import numpy as np
import pytest

from oracles import cond_vector, trans
from conftest import random_function, random_grid
from rakingratio.measures import (
    CellGrid,
    MarginalTarget,
    Partition,
    PiecewiseFunction,
    WeightedSample,
    ZeroProbabilityError,
    bridge_covariance,
    cell_indicators,
    conditional_expectation,
    constant,
    expectation,
    indicator,
    transition_matrix,
)


def test_partition_rejects_singletons_and_duplicates():
    with pytest.raises(ValueError):
        Partition("A", ("a",))
    with pytest.raises(ValueError):
        Partition("A", ("a", "a"))
    assert Partition("A", ("x", "y")).index("y") == 1
    with pytest.raises(KeyError):
        Partition("A", ("x", "y")).index("z")


def test_target_validation():
    part = Partition("A", ("a", "b"))
    with pytest.raises(ValueError):
        MarginalTarget(part, [0.5, 0.6])
    with pytest.raises(ValueError):
        MarginalTarget(part, [1.0, 0.0])
    with pytest.raises(ValueError):
        MarginalTarget(part, [0.2, 0.3, 0.5])
    assert MarginalTarget(part, [0.25, 0.75]).p_min == 0.25


def test_grid_validation():
    a = Partition("A", ("a", "b"))
    with pytest.raises(ValueError):
        CellGrid([a], [[0], [0]], [0.5, 0.5])
    with pytest.raises(ValueError):
        CellGrid([a], [[0], [1]], [0.5, 0.6])
    with pytest.raises(ValueError):
        CellGrid([a], [[0], [2]], [0.5, 0.5])


def test_a2_conditional_expectations(a2):
    grid, f = a2
    # hand computation from the joint law and cell means
    np.testing.assert_allclose(conditional_expectation(grid, f, "A"),
                               [(0.2 * 0.75 + 0.25 * 0.5) / 0.45,
                                (0.25 * -0.5 + 0.1 * 0.25) / 0.35, 0.5], atol=1e-15)
    np.testing.assert_allclose(conditional_expectation(grid, f, "B"),
                               [0.075 / 0.55, 0.2 / 0.45], atol=1e-15)
    np.testing.assert_allclose(conditional_expectation(grid, f, "A"), [0.611, -0.286, 0.5],
                               atol=5e-4)
    np.testing.assert_allclose(conditional_expectation(grid, f, "B"), [0.136, 0.444],
                               atol=5e-4)


def test_a2_base_variance(a2):
    grid, f = a2
    assert bridge_covariance(grid, f, f) == pytest.approx(0.718125, abs=1e-12)


def test_conditional_expectation_and_transition_match_oracle(rng):
    for _ in range(20):
        grid = random_grid(rng, (3, 4, 2))
        f = random_function(rng, grid)
        for k in range(3):
            np.testing.assert_allclose(conditional_expectation(grid, f, k),
                                       cond_vector(grid, f.mean, k), atol=1e-14)
            for l in range(3):
                t = transition_matrix(grid, l, k)
                np.testing.assert_allclose(t, trans(grid, l, k), atol=1e-14)
                np.testing.assert_allclose(t.sum(axis=1), 1, atol=1e-14)


def test_self_transition_is_identity(a2):
    grid, _ = a2
    assert np.array_equal(transition_matrix(grid, "A", "A"), np.eye(3))


def test_tower_property(rng):
    grid = random_grid(rng, (4, 3))
    f = random_function(rng, grid)
    ea = conditional_expectation(grid, f, 0)
    assert grid.marginal(0) @ ea == pytest.approx(expectation(grid, f), abs=1e-14)


def test_zero_cell_raises():
    grid = CellGrid.from_table(np.array([[0.5, 0.5], [0.0, 0.0]]))
    f = constant(grid, 1.0)
    with pytest.raises(ZeroProbabilityError) as info:
        conditional_expectation(grid, f, "rows")
    assert info.value.label == "r2"
    with pytest.raises(ZeroDivisionError):
        transition_matrix(grid, "rows", "cols")


def test_indicator_and_constant_covariance(a2):
    grid, _ = a2
    ind = indicator(grid, "A", "A1")
    pa = grid.marginal("A")[0]
    assert bridge_covariance(grid, ind, ind) == pytest.approx(pa * (1 - pa), abs=1e-15)
    c = constant(grid, 3.0)
    assert bridge_covariance(grid, c, c) == pytest.approx(0.0, abs=1e-13)
    cells = cell_indicators(grid)
    cov = np.array([[bridge_covariance(grid, a, b) for b in cells] for a in cells])
    np.testing.assert_allclose(cov, np.diag(grid.p) - np.outer(grid.p, grid.p), atol=1e-15)


def test_piecewise_function_noise_algebra():
    f = PiecewiseFunction([0.0, 1.0], [0.25, 1.0], name="f")
    g = PiecewiseFunction([1.0, 0.0], name="g", noise={"f": [0.5, -1.0]})
    assert np.allclose(g.var, [0.25, 1.0])
    np.testing.assert_allclose(f.within_cov(g), [0.25, -1.0])
    h = f + g
    np.testing.assert_allclose(h.var, [1.0, 0.0])
    np.testing.assert_allclose((2 * f).var, [1.0, 4.0])
    with pytest.raises(ValueError):
        PiecewiseFunction([0.0, 1.0], [-0.1, 0.0])
    with pytest.raises(ValueError):
        PiecewiseFunction([0.0, 2.0], bound=1.0)


def test_weighted_sample_validation(a2):
    grid, _ = a2
    s = WeightedSample.from_grid_draw(grid, [0, 1, 5], values={"x": [1.0, 2.0, 3.0]})
    assert s.n == 3 and s.mean("x") == pytest.approx(2.0)
    with pytest.raises(ValueError):
        WeightedSample(grid.partitions, grid.codes[:2], weights=[0.3, 0.3])
