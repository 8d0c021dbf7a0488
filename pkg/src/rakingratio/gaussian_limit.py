"""Limiting Gaussian process of the N-times raked empirical process.

The raked P-Brownian bridge is defined recursively by

    G^(N)(f) = G^(N-1)(f) - sum_j E(f | A_j^(N)) G^(N-1)(A_j^(N))

and equals ``G(f) - sum_k Phi_k^(N)(f)' G[A^(k)]`` for coefficient vectors
``Phi_k^(N)(f)`` obtained by a backward recursion over the schedule.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .measures import (
    CellGrid,
    MarginalTarget,
    PiecewiseFunction,
    bridge_covariance,
    conditional_expectation,
    transition_matrix,
)

PSD_TOL = 1e-10


def multinomial_covariance(p) -> np.ndarray:
    """Covariance diag(p) - p p' of the bridge on the cells of one partition."""
    p = np.asarray(p, dtype=float)
    return np.diag(p) - np.outer(p, p)


def is_psd(matrix, tol=PSD_TOL) -> bool:
    matrix = np.asarray(matrix, dtype=float)
    sym = 0.5 * (matrix + matrix.T)
    return bool(np.linalg.eigvalsh(sym).min() >= -tol)


class GaussianLimitModel:
    """Schedule-dependent quantities of G^(N) on a fixed refinement grid.

    Parameters
    ----------
    grid : CellGrid
        The true joint law P on the refinement cells.
    schedule : sequence of partition indices or names
        The partition raked at steps 1, 2, ..., in order. The raking
        targets are the true marginals of ``grid``.
    """

    def __init__(self, grid: CellGrid, schedule: Sequence):
        self.grid = grid
        self.schedule = [grid.partition_index(k) for k in schedule]
        for a, b in zip(self.schedule, self.schedule[1:]):
            if a == b:
                raise ValueError("consecutive raking steps must use distinct partitions")
        self._trans: dict[tuple[int, int], np.ndarray] = {}
        self.marginals = {k: grid.marginal(k) for k in set(self.schedule)}
        self.vblocks = {k: multinomial_covariance(p) for k, p in self.marginals.items()}

    def _n(self, N) -> int:
        N = len(self.schedule) if N is None else int(N)
        if not 0 <= N <= len(self.schedule):
            raise ValueError(f"N={N} outside the schedule (length {len(self.schedule)})")
        return N

    def transition(self, l: int, k: int) -> np.ndarray:
        key = (l, k)
        if key not in self._trans:
            self._trans[key] = transition_matrix(self.grid, l, k)
        return self._trans[key]

    def phi(self, f: PiecewiseFunction, N=None) -> list[np.ndarray]:
        """``[Phi_1^(N)(f), ..., Phi_N^(N)(f)]`` by backward recursion."""
        N = self._n(N)
        sched = self.schedule[:N]
        cond = {k: conditional_expectation(self.grid, f, k) for k in set(sched)}
        phis: list[np.ndarray] = [None] * N  # type: ignore[list-item]
        for k in range(N - 1, -1, -1):
            v = cond[sched[k]].copy()
            for l in range(k + 1, N):
                v -= self.transition(sched[k], sched[l]) @ phis[l]
            phis[k] = v
        return phis

    def linear_form(self, f: PiecewiseFunction, N=None) -> np.ndarray:
        """Per-cell coefficients ``c`` with G^(N)(f) = sum_c c G(1_cell) + within-cell noise."""
        coef = f.mean.copy()
        for k, phi in zip(self.schedule, self.phi(f, N)):
            coef -= phi[self.grid.codes[:, k]]
        return coef

    def covariance(self, f, g, N=None) -> float:
        N = self._n(N)
        cov = bridge_covariance(self.grid, f, g)
        if N == 0:
            return cov
        phi_f = self.phi(f, N)
        phi_g = phi_f if g is f else self.phi(g, N)
        for k, a, b in zip(self.schedule, phi_f, phi_g):
            cov -= a @ self.vblocks[k] @ b
        return float(cov)

    def covariance_matrix(self, functions: Sequence[PiecewiseFunction], N=None) -> np.ndarray:
        N = self._n(N)
        m = len(functions)
        base = np.array([[bridge_covariance(self.grid, f, g) for g in functions] for f in functions])
        phis = [self.phi(f, N) for f in functions]
        out = base.copy()
        for step, k in enumerate(self.schedule[:N]):
            block = np.array([phis[i][step] for i in range(m)])
            out -= block @ self.vblocks[k] @ block.T
        return 0.5 * (out + out.T)


def phi_vectors(grid: CellGrid, schedule, f: PiecewiseFunction, N=None) -> list[np.ndarray]:
    return GaussianLimitModel(grid, schedule).phi(f, N)


def covariance_gn(grid: CellGrid, schedule, f, g, N=None) -> float:
    """Cov(G^(N)(f), G^(N)(g))."""
    return GaussianLimitModel(grid, schedule).covariance(f, g, N)


def variance_gn(grid: CellGrid, schedule, f, N=None) -> float:
    return covariance_gn(grid, schedule, f, f, N)


def covariance_matrix(grid: CellGrid, schedule, functions, N=None) -> np.ndarray:
    return GaussianLimitModel(grid, schedule).covariance_matrix(functions, N)


def risk_ratio(grid: CellGrid, schedule, f, N=None) -> float:
    """Asymptotic quadratic risk factor V(G^(N)(f)) / sigma_f^2 after raking."""
    model = GaussianLimitModel(grid, schedule)
    sigma2 = model.covariance(f, f, 0)
    if sigma2 <= PSD_TOL:
        raise ValueError(f"function {f.name!r} has zero variance; the risk ratio is undefined")
    ratio = model.covariance(f, f, N) / sigma2
    if -1e-12 <= ratio < 0:
        return 0.0
    if 1 < ratio <= 1 + 1e-12:
        return 1.0
    return ratio


def check_cycle_monotonicity(grid: CellGrid, schedule, functions, N0: int, N1: int) -> bool:
    """Is Sigma^(N0) - Sigma^(N1) positive semidefinite?

    Only valid when the last ``N0`` steps before ``N1`` repeat the first
    ``N0`` steps and ``N1 >= 2 * N0``; other pairs raise ``ValueError``.
    """
    model = GaussianLimitModel(grid, schedule)
    N0, N1 = int(N0), int(N1)
    model._n(N1)
    if N1 < 2 * N0:
        raise ValueError(
            f"need N1 >= 2*N0 (got N0={N0}, N1={N1}): raking must wrap a full cycle"
        )
    sched = model.schedule
    for k in range(N0):
        if sched[N0 - k - 1] != sched[N1 - k - 1]:
            raise ValueError(
                f"steps {N0 - k} and {N1 - k} rake different partitions; the last N0 "
                "steps before N1 must repeat steps 1..N0"
            )
    diff = model.covariance_matrix(functions, N0) - model.covariance_matrix(functions, N1)
    return is_psd(diff)


def sample_gn(grid: CellGrid, schedule, functions, N=None, count=1, seed=None) -> np.ndarray:
    """Draws of (G^(N)(f_1), ..., G^(N)(f_m)), shape ``(count, m)``.

    The bridge on the refinement cells is drawn with covariance
    diag(p) - p p'; each function adds its within-cell noise, shared
    between functions through common noise sources.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    model = GaussianLimitModel(grid, schedule)
    rng = np.random.default_rng(seed)
    p = grid.p
    sqrt_p = np.sqrt(p)
    z = rng.standard_normal((count, grid.n_cells)) * sqrt_p
    cells = z - np.outer(z.sum(axis=1), p)
    coefs = np.array([model.linear_form(f, N) for f in functions])
    draws = cells @ coefs.T
    sources = sorted({s for f in functions for s in f.noise})
    if sources:
        w = rng.standard_normal((count, len(sources), grid.n_cells))
        for i, f in enumerate(functions):
            for s, load in f.noise.items():
                draws[:, i] += w[:, sources.index(s), :] @ (load * sqrt_p)
    return draws


class ProductConstants(NamedTuple):
    kappa: float
    p_prod: float
    m_prod: int
    m_sum: int


def product_constants(M: float, targets: Sequence) -> ProductConstants:
    """Penalty factors kappa = prod(1 + M m_N), prod p_N, prod m_N and sum m_N."""
    kappa, pp, mp, ms = 1.0, 1.0, 1, 0
    for t in targets:
        probs = t.probs if isinstance(t, MarginalTarget) else np.asarray(t, dtype=float)
        if np.any(probs <= 0):
            raise ValueError("targets must be strictly positive")
        m = len(probs)
        kappa *= 1 + M * m
        pp *= float(probs.min())
        mp *= m
        ms += m
    return ProductConstants(kappa, pp, mp, ms)
