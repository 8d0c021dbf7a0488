"""Finite partitions, joint cell distributions and piecewise functions.

Every distribution lives on the common refinement of the declared partitions:
a list of cells, each tagged with one label per partition, and a probability
per cell. Partitions are label maps over that list, so marginals, conditional
expectations and transition matrices are exact finite sums.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

SIMPLEX_TOL = 1e-12
WEIGHT_TOL = 1e-10


class ZeroProbabilityError(ZeroDivisionError):
    """A conditioning cell has zero probability."""

    def __init__(self, partition, label):
        self.partition = partition
        self.label = label
        super().__init__(
            f"cell {label!r} of partition {partition!r} has zero probability"
        )


@dataclass(frozen=True)
class Partition:
    name: str
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(lab) for lab in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValueError(f"partition {self.name!r} needs at least 2 cells")
        if len(set(labels)) != len(labels):
            raise ValueError(f"partition {self.name!r} has duplicate labels")

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise KeyError(f"{label!r} is not a cell of partition {self.name!r}") from None


@dataclass(frozen=True)
class MarginalTarget:
    """Known probabilities of the cells of one partition."""

    partition: Partition
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.partition.size,):
            raise ValueError(
                f"target for {self.partition.name!r} has {probs.size} entries, "
                f"expected {self.partition.size}"
            )
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"target for {self.partition.name!r} is not a probability vector")
        if probs.min() <= 0:
            raise ValueError(f"target for {self.partition.name!r} has a zero cell")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def p_min(self) -> float:
        return float(self.probs.min())


def _partition_index(partitions, k) -> int:
    if isinstance(k, str):
        for i, part in enumerate(partitions):
            if part.name == k:
                return i
        raise KeyError(f"no partition named {k!r}")
    if isinstance(k, Partition):
        return _partition_index(partitions, k.name)
    k = int(k)
    if not 0 <= k < len(partitions):
        raise IndexError(f"partition index {k} out of range (K={len(partitions)})")
    return k


class _LabelledMeasure:
    """Shared behaviour of CellGrid and WeightedSample: mass on labelled atoms."""

    partitions: tuple[Partition, ...]
    codes: np.ndarray

    @property
    def mass(self) -> np.ndarray:
        raise NotImplementedError

    def with_mass(self, mass):
        raise NotImplementedError

    def partition_index(self, k) -> int:
        return _partition_index(self.partitions, k)

    def labels_of(self, k) -> np.ndarray:
        """Integer cell index in partition ``k`` for every atom."""
        return self.codes[:, self.partition_index(k)]

    def marginal(self, k) -> np.ndarray:
        k = self.partition_index(k)
        return np.bincount(self.codes[:, k], weights=self.mass,
                           minlength=self.partitions[k].size)


class CellGrid(_LabelledMeasure):
    """Probabilities on the refinement cells of ``K`` partitions.

    ``cells`` is an ``(n_cells, K)`` integer array whose row ``c`` gives the
    label index of cell ``c`` in each partition; ``p`` is the probability of
    each refinement cell.
    """

    def __init__(self, partitions: Sequence[Partition], cells, p):
        self.partitions = tuple(partitions)
        if not self.partitions:
            raise ValueError("at least one partition is required")
        names = [part.name for part in self.partitions]
        if len(set(names)) != len(names):
            raise ValueError("partition names must be distinct")
        codes = np.asarray(cells, dtype=np.intp)
        if codes.ndim != 2 or codes.shape[1] != len(self.partitions):
            raise ValueError("cells must be an (n_cells, K) array of label indices")
        for k, part in enumerate(self.partitions):
            if codes.size and (codes[:, k].min() < 0 or codes[:, k].max() >= part.size):
                raise ValueError(f"cell label out of range for partition {part.name!r}")
        if len({tuple(row) for row in codes}) != len(codes):
            raise ValueError("refinement cells must be distinct")
        p = np.asarray(p, dtype=float)
        if p.shape != (len(codes),):
            raise ValueError("one probability per cell is required")
        if np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("cell probabilities must be nonnegative and sum to 1")
        codes.setflags(write=False)
        p.setflags(write=False)
        self.codes = codes
        self.p = p

    @classmethod
    def from_table(cls, table, rows: Partition | None = None, cols: Partition | None = None):
        """Two-way contingency table, one refinement cell per entry."""
        table = np.asarray(table, dtype=float)
        m1, m2 = table.shape
        rows = rows or Partition("rows", tuple(f"r{i + 1}" for i in range(m1)))
        cols = cols or Partition("cols", tuple(f"c{j + 1}" for j in range(m2)))
        if (rows.size, cols.size) != table.shape:
            raise ValueError("partition sizes do not match the table shape")
        ii, jj = np.meshgrid(np.arange(m1), np.arange(m2), indexing="ij")
        cells = np.column_stack([ii.ravel(), jj.ravel()])
        return cls([rows, cols], cells, table.ravel())

    @property
    def mass(self) -> np.ndarray:
        return self.p

    @property
    def n_cells(self) -> int:
        return len(self.p)

    def with_mass(self, mass) -> "CellGrid":
        return CellGrid(self.partitions, self.codes, mass)

    def cell_labels(self, c) -> tuple[str, ...]:
        return tuple(part.labels[j] for part, j in zip(self.partitions, self.codes[c]))

    def table(self, rows=0, cols=1) -> np.ndarray:
        """Dense two-way view of ``p`` over partitions ``rows`` x ``cols``."""
        r, c = self.partition_index(rows), self.partition_index(cols)
        out = np.zeros((self.partitions[r].size, self.partitions[c].size))
        np.add.at(out, (self.codes[:, r], self.codes[:, c]), self.p)
        return out

    def target(self, k) -> MarginalTarget:
        """The true marginal of partition ``k`` as a raking target."""
        k = self.partition_index(k)
        return MarginalTarget(self.partitions[k], self.marginal(k))

    def __eq__(self, other):
        return (
            isinstance(other, CellGrid)
            and self.partitions == other.partitions
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self):
        names = ", ".join(part.name for part in self.partitions)
        return f"CellGrid([{names}], n_cells={self.n_cells})"


@dataclass(frozen=True)
class PiecewiseFunction:
    """A bounded function summarised on refinement cells.

    ``mean[c]`` is E(f | cell c). Within-cell fluctuation is written as a sum
    of independent unit-variance noise sources with per-cell loadings, so
    ``var = sum(loading**2)`` and two functions covary within a cell only
    through shared sources. By default a function owns one private source.
    """

    mean: np.ndarray
    var: np.ndarray | None = None
    bound: float | None = None
    name: str = "f"
    noise: Mapping[str, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector over refinement cells")
        if self.noise is None:
            var = np.zeros_like(mean) if self.var is None else np.asarray(self.var, dtype=float)
            if var.shape != mean.shape:
                raise ValueError("var must have one entry per cell")
            if np.any(var < 0):
                raise ValueError(f"function {self.name!r} has negative conditional variance")
            noise = {self.name: np.sqrt(var)} if np.any(var > 0) else {}
        else:
            noise = {str(s): np.asarray(v, dtype=float) for s, v in self.noise.items()}
            for v in noise.values():
                if v.shape != mean.shape:
                    raise ValueError("noise loadings must have one entry per cell")
            var = sum((v**2 for v in noise.values()), np.zeros_like(mean))
            if self.var is not None and not np.allclose(var, self.var, rtol=0, atol=1e-12):
                raise ValueError("declared var does not match the noise loadings")
        bound = float(np.abs(mean).max()) if self.bound is None else float(self.bound)
        if np.any(np.abs(mean) > bound + 1e-12):
            raise ValueError(f"function {self.name!r} exceeds its bound {bound}")
        for arr in (mean, var, *noise.values()):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        object.__setattr__(self, "bound", bound)
        object.__setattr__(self, "noise", noise)

    def within_cov(self, other: "PiecewiseFunction") -> np.ndarray:
        """Per-cell covariance of the within-cell fluctuations of two functions."""
        out = np.zeros_like(self.mean)
        for source, load in self.noise.items():
            if source in other.noise:
                out = out + load * other.noise[source]
        return out

    def scale(self, a: float, name=None) -> "PiecewiseFunction":
        return PiecewiseFunction(
            a * self.mean, bound=abs(a) * self.bound, name=name or f"{a}*{self.name}",
            noise={s: a * v for s, v in self.noise.items()},
        )

    def __add__(self, other: "PiecewiseFunction") -> "PiecewiseFunction":
        noise = dict(self.noise)
        for s, v in other.noise.items():
            noise[s] = noise[s] + v if s in noise else v
        return PiecewiseFunction(
            self.mean + other.mean, bound=self.bound + other.bound,
            name=f"{self.name}+{other.name}", noise=noise,
        )

    def __rmul__(self, a):
        return self.scale(float(a))


def indicator(grid: CellGrid, k, j) -> PiecewiseFunction:
    """The step function 1 on cell ``j`` of partition ``k``."""
    k = grid.partition_index(k)
    part = grid.partitions[k]
    j = part.index(j) if isinstance(j, str) else int(j)
    mean = (grid.codes[:, k] == j).astype(float)
    return PiecewiseFunction(mean, bound=1.0, name=f"1[{part.name}={part.labels[j]}]")


def constant(grid: CellGrid, c: float, name="const") -> PiecewiseFunction:
    return PiecewiseFunction(np.full(grid.n_cells, float(c)), name=name)


def cell_indicators(grid: CellGrid) -> list[PiecewiseFunction]:
    return [
        PiecewiseFunction(np.eye(grid.n_cells)[c], bound=1.0, name=f"1[cell{c}]")
        for c in range(grid.n_cells)
    ]


def marginalize(grid: CellGrid, k) -> np.ndarray:
    return grid.marginal(k)


def expectation(grid: CellGrid, f: PiecewiseFunction) -> float:
    return float(grid.p @ f.mean)


def second_moment(grid: CellGrid, f: PiecewiseFunction, g: PiecewiseFunction) -> float:
    """P(fg), including the within-cell covariance of ``f`` and ``g``."""
    return float(grid.p @ (f.mean * g.mean + f.within_cov(g)))


def bridge_covariance(grid: CellGrid, f: PiecewiseFunction, g: PiecewiseFunction) -> float:
    """Cov(G(f), G(g)) = P(fg) - P(f)P(g) for the P-Brownian bridge G."""
    return second_moment(grid, f, g) - expectation(grid, f) * expectation(grid, g)


def _checked_marginal(grid: CellGrid, k) -> np.ndarray:
    k = grid.partition_index(k)
    marg = grid.marginal(k)
    zero = np.flatnonzero(marg <= 0)
    if zero.size:
        part = grid.partitions[k]
        raise ZeroProbabilityError(part.name, part.labels[zero[0]])
    return marg


def conditional_expectation(grid: CellGrid, f: PiecewiseFunction, k) -> np.ndarray:
    """Vector of E(f | A_j) over the cells A_j of partition ``k``."""
    k = grid.partition_index(k)
    marg = _checked_marginal(grid, k)
    num = np.bincount(grid.codes[:, k], weights=grid.p * f.mean,
                      minlength=grid.partitions[k].size)
    return num / marg


def joint_table(grid: CellGrid, l, k) -> np.ndarray:
    """Matrix of P(A_i^(l) & A_j^(k)); the diagonal of marginals when l == k."""
    return grid.table(l, k)


def transition_matrix(grid: CellGrid, l, k) -> np.ndarray:
    """Row-stochastic matrix with entries P(A_j^(k) | A_i^(l))."""
    l, k = grid.partition_index(l), grid.partition_index(k)
    marg = _checked_marginal(grid, l)
    if l == k:
        return np.eye(len(marg))
    return grid.table(l, k) / marg[:, None]


class WeightedSample(_LabelledMeasure):
    """``n`` sample points with labels in each partition and a weight each.

    ``values`` maps function names to raw per-point values.
    """

    def __init__(self, partitions: Sequence[Partition], codes, weights=None,
                 values: Mapping[str, np.ndarray] | None = None):
        self.partitions = tuple(partitions)
        codes = np.asarray(codes, dtype=np.intp)
        if codes.ndim != 2 or codes.shape[1] != len(self.partitions):
            raise ValueError("codes must be an (n, K) array of label indices")
        n = len(codes)
        if n < 1:
            raise ValueError("a sample needs at least one point")
        weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        if weights.shape != (n,):
            raise ValueError("one weight per point is required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        self.codes = codes
        self.weights = weights
        self.values = {k: np.asarray(v, dtype=float) for k, v in (values or {}).items()}

    @classmethod
    def from_grid_draw(cls, grid: CellGrid, cell_index, values=None):
        """Sample whose points fall in the given refinement cells of ``grid``."""
        cell_index = np.asarray(cell_index, dtype=np.intp)
        return cls(grid.partitions, grid.codes[cell_index], values=values)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def mass(self) -> np.ndarray:
        return self.weights

    def with_mass(self, mass) -> "WeightedSample":
        out = WeightedSample.__new__(WeightedSample)
        out.partitions = self.partitions
        out.codes = self.codes
        mass = np.asarray(mass, dtype=float)
        if mass.shape != self.weights.shape:
            raise ValueError("one weight per point is required")
        out.weights = mass
        out.values = self.values
        return out

    def mean(self, name: str) -> float:
        """P_n(f) under the current weights."""
        return float(self.weights @ self.values[name])
