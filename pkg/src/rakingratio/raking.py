"""The raking-ratio operator and its iteration."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .measures import (
    WEIGHT_TOL,
    CellGrid,
    MarginalTarget,
    PiecewiseFunction,
    WeightedSample,
    _LabelledMeasure,
)

DEFAULT_TOL = 1e-9


class EmptyMarginError(ValueError):
    """The current measure puts no mass on a cell whose target is positive."""

    def __init__(self, partition, label):
        self.partition = partition
        self.label = label
        super().__init__(
            f"cannot rake: cell {label!r} of partition {partition!r} is empty "
            "but has a positive target"
        )


class RakingSchedule:
    """Ordered raking steps, each a ``(partition index, target)`` pair.

    Consecutive steps must use distinct partitions; a partition may come back
    after at least one other step.
    """

    def __init__(self, steps: Sequence[tuple[int, MarginalTarget]], period: int | None = None):
        self.steps = [(int(k), t) for k, t in steps]
        for (k0, _), (k1, _) in zip(self.steps, self.steps[1:]):
            if k0 == k1:
                raise ValueError(
                    f"consecutive raking steps use the same partition (index {k0})"
                )
        self.period = period

    @classmethod
    def periodic(cls, measure: _LabelledMeasure, targets: Sequence[MarginalTarget], length: int):
        if len(targets) < 2:
            raise ValueError("a periodic schedule needs at least 2 targets")
        idx = [measure.partition_index(t.partition) for t in targets]
        steps = [(idx[i % len(idx)], targets[i % len(idx)]) for i in range(length)]
        return cls(steps, period=len(targets))

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i):
        return self.steps[i]


@dataclass
class RakingState:
    measure: CellGrid | WeightedSample
    iteration: int = 0
    margin_residuals: dict[str, float] = field(default_factory=dict)
    kl_history: list[float] = field(default_factory=list)

    @property
    def mass(self) -> np.ndarray:
        return self.measure.mass


def _as_state(x) -> RakingState:
    return x if isinstance(x, RakingState) else RakingState(x)


def ratio_factors(measure: _LabelledMeasure, target: MarginalTarget):
    """Per-cell multipliers target/current for the target's partition."""
    k = measure.partition_index(target.partition)
    current = measure.marginal(k)
    empty = np.flatnonzero((current <= 0) & (target.probs > 0))
    if empty.size:
        part = measure.partitions[k]
        raise EmptyMarginError(part.name, part.labels[empty[0]])
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = np.where(current > 0, target.probs / current, 0.0)
    return k, current, factors


def rake_step(state, target: MarginalTarget) -> RakingState:
    """One ratio step: rescale mass so the target partition's marginal is exact."""
    state = _as_state(state)
    measure = state.measure
    k, current, factors = ratio_factors(measure, target)
    mass = measure.mass * factors[measure.codes[:, k]]
    # Pin the marginal: renormalising cell by cell removes the product's rounding.
    achieved = np.bincount(measure.codes[:, k], weights=mass, minlength=len(factors))
    with np.errstate(divide="ignore", invalid="ignore"):
        fix = np.where(achieved > 0, target.probs / achieved, 0.0)
    mass = mass * fix[measure.codes[:, k]]
    new = measure.with_mass(mass)
    residuals = dict(state.margin_residuals)
    residuals[target.partition.name] = float(np.abs(new.marginal(k) - target.probs).max())
    return RakingState(
        new,
        state.iteration + 1,
        residuals,
        state.kl_history + [margin_kl(current, target.probs)],
    )


def rake(initial, schedule: RakingSchedule | Sequence[MarginalTarget]) -> list[RakingState]:
    """All iterates ``[P^(0), ..., P^(N)]`` along a schedule."""
    states = [_as_state(initial)]
    for step in schedule:
        target = step[1] if isinstance(step, tuple) else step
        states.append(rake_step(states[-1], target))
    return states


def exact_weights(schedule: RakingSchedule | Sequence[MarginalTarget],
                  initial: WeightedSample) -> np.ndarray:
    """Closed-form point weights after raking along ``schedule``.

    A point lying in cell A_{j_k}^(k) of each raked partition gets
    ``(1/n) * prod_k P(A_{j_k}^(k)) / P_n^(k-1)(A_{j_k}^(k))``. The
    denominators are tracked on the refinement cells actually hit by the
    sample, so the per-point weights are never updated step by step.
    """
    targets = [step[1] if isinstance(step, tuple) else step for step in schedule]
    n = initial.n
    cells, inverse = np.unique(initial.codes, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    counts = np.bincount(inverse, minlength=len(cells)).astype(float)
    log_factor = np.zeros(len(cells))
    cell_mass = counts / n
    for target in targets:
        k = initial.partition_index(target.partition)
        lab = cells[:, k]
        current = np.bincount(lab, weights=cell_mass, minlength=target.partition.size)
        empty = np.flatnonzero((current <= 0) & (target.probs > 0))
        if empty.size:
            raise EmptyMarginError(target.partition.name, target.partition.labels[empty[0]])
        ratio = target.probs[lab] / current[lab]
        log_factor += np.log(ratio)
        cell_mass = counts / n * np.exp(log_factor)
    return np.exp(log_factor)[inverse] / n


def kl_divergence(source, to) -> float:
    """Relative entropy sum source * log(source / to) of two measures on one support."""
    p = np.asarray(getattr(source, "mass", source), dtype=float)
    q = np.asarray(getattr(to, "mass", to), dtype=float)
    if p.shape != q.shape:
        raise ValueError("measures must live on the same support")
    pos = p > 0
    if np.any(q[pos] <= 0):
        raise ValueError("`to` does not dominate `source`: it vanishes where source has mass")
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def margin_kl(current, target) -> float:
    """d_K(P^(N-1) || P^(N)) computed from the raked partition's margins only."""
    return kl_divergence(current, target)


def margin_preserving_perturbation(measure: _LabelledMeasure, k, rng, scale=0.3):
    """Random measure on the same support with the same marginal on partition ``k``."""
    k = measure.partition_index(k)
    lab = measure.codes[:, k]
    mass = measure.mass
    tilt = mass * np.exp(scale * rng.standard_normal(mass.shape))
    block_old = np.bincount(lab, weights=mass, minlength=measure.partitions[k].size)
    block_new = np.bincount(lab, weights=tilt, minlength=measure.partitions[k].size)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(block_new > 0, block_old / block_new, 0.0)
    return tilt * ratio[lab]


def verify_projection(before, after, target: MarginalTarget, n_candidates=200,
                      seed=0, scale=0.3, tol=1e-10) -> bool:
    """Check that ``after`` minimises d_K(before || Q) over margin-feasible Q.

    The candidates are random margin-preserving perturbations of ``after``;
    any candidate that misses the target margin is skipped and counted.
    """
    before = getattr(before, "measure", before)
    after = getattr(after, "measure", after)
    k = after.partition_index(target.partition)
    base = kl_divergence(before, after)
    rng = np.random.default_rng(seed)
    skipped = 0
    for _ in range(n_candidates):
        q = margin_preserving_perturbation(after, k, rng, scale)
        marg = np.bincount(after.codes[:, k], weights=q, minlength=len(target.probs))
        if np.abs(marg - target.probs).max() > WEIGHT_TOL:
            skipped += 1
            continue
        if base > kl_divergence(before, q) + tol:
            return False
    if skipped:
        warnings.warn(f"{skipped} candidate measures violated the margins and were skipped")
    return True


def max_residual(measure: _LabelledMeasure, targets: Sequence[MarginalTarget]) -> dict[str, float]:
    return {
        t.partition.name: float(np.abs(measure.marginal(t.partition) - t.probs).max())
        for t in targets
    }


@dataclass
class ConvergenceResult:
    state: RakingState
    iterations: int
    converged: bool
    trace: list[RakingState]

    def __iter__(self):
        return iter((self.state, self.iterations, self.converged))


def rake_until_converged(initial, targets: Sequence[MarginalTarget], tol=DEFAULT_TOL,
                         max_iters=1000) -> ConvergenceResult:
    """Cycle through ``targets`` until every margin is within ``tol``.

    Returns ``(state, iterations, converged)`` on unpacking; ``iterations``
    counts ratio steps. ``trace`` holds every iterate, starting from N=0.
    """
    targets = list(targets)
    if len(targets) < 2:
        raise ValueError("at least two targets are needed")
    state = _as_state(initial)
    state.margin_residuals = max_residual(state.measure, targets)
    trace = [state]
    i = 0
    while max(state.margin_residuals.values()) >= tol:
        if state.iteration - trace[0].iteration >= max_iters:
            return ConvergenceResult(state, state.iteration, False, trace)
        state = rake_step(state, targets[i % len(targets)])
        state.margin_residuals = max_residual(state.measure, targets)
        trace.append(state)
        i += 1
    return ConvergenceResult(state, state.iteration, True, trace)


def raked_mean(measure: _LabelledMeasure, f) -> float:
    """P^(N)(f) for a point sample (by name) or a grid (PiecewiseFunction)."""
    if isinstance(measure, WeightedSample):
        return measure.mean(f)
    if isinstance(f, PiecewiseFunction):
        return float(measure.mass @ f.mean)
    raise TypeError("expected a function name for samples or a PiecewiseFunction for grids")


def conditional_means(measure: _LabelledMeasure, values, k) -> np.ndarray:
    """E_n(f | A_j) under the current weights, for each cell of partition ``k``."""
    k = measure.partition_index(k)
    lab = measure.codes[:, k]
    size = measure.partitions[k].size
    num = np.bincount(lab, weights=measure.mass * values, minlength=size)
    den = np.bincount(lab, weights=measure.mass, minlength=size)
    return num / den
