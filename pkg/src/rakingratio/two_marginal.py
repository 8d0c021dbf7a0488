"""Two partitions raked alternately: finite-N S vectors, limits and G^(inf).

With partitions A (raked at odd steps) and B (even steps) the raked bridge is

    G^(2m)(f)   = G(f) - S1_even^(m-1)(f)' G[A] - S2_even^(m-2)(f)' G[B]
    G^(2m+1)(f) = G(f) - S1_odd^(m-1)(f)'  G[A] - S2_odd^(m-1)(f)'  G[B]

where the S vectors are partial geometric sums of the composed conditional
matrices ``mA = P_{B|A} P_{A|B}`` and ``mB = P_{A|B} P_{B|A}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .measures import (
    CellGrid,
    PiecewiseFunction,
    bridge_covariance,
    conditional_expectation,
    expectation,
    transition_matrix,
)

ERGODIC_MARGIN = 1e-9
STOCHASTIC_TOL = 1e-12


class ErgodicityError(ValueError):
    """The composed conditional matrix has no spectral gap."""


class SVectors(NamedTuple):
    s1_even: np.ndarray
    s2_odd: np.ndarray
    s1_odd: np.ndarray
    s2_even: np.ndarray


def second_eigenvalue_modulus(matrix, invariant=None) -> float:
    """Largest eigenvalue modulus of a row-stochastic matrix once 1 is deflated."""
    matrix = np.asarray(matrix, dtype=float)
    if np.any(matrix < -STOCHASTIC_TOL) or np.abs(matrix.sum(axis=1) - 1).max() > 1e-10:
        raise ValueError("matrix is not row-stochastic")
    if invariant is None:
        w, vl = np.linalg.eig(matrix.T)
        invariant = np.real(vl[:, np.argmin(np.abs(w - 1))])
        invariant = invariant / invariant.sum()
    deflated = matrix - np.outer(np.ones(len(matrix)), invariant)
    return float(np.abs(np.linalg.eigvals(deflated)).max())


@dataclass
class TwoMarginalModel:
    grid: CellGrid
    a: int
    b: int
    pab: np.ndarray   # P_{A|B}: rows B_i, columns A_j
    pba: np.ndarray   # P_{B|A}: rows A_i, columns B_j
    p_a: np.ndarray
    p_b: np.ndarray

    @classmethod
    def from_grid(cls, grid: CellGrid, a=0, b=1) -> "TwoMarginalModel":
        a, b = grid.partition_index(a), grid.partition_index(b)
        if a == b:
            raise ValueError("the two partitions must differ")
        return cls(grid, a, b, transition_matrix(grid, b, a), transition_matrix(grid, a, b),
                   grid.marginal(a), grid.marginal(b))

    @property
    def m_a(self) -> np.ndarray:
        return self.pba @ self.pab

    @property
    def m_b(self) -> np.ndarray:
        return self.pab @ self.pba

    @property
    def joint(self) -> np.ndarray:
        """P(A_i & B_j)."""
        return self.grid.table(self.a, self.b)

    @property
    def lambdas(self) -> tuple[float, float]:
        return spectral_gap(self)

    def cond(self, f: PiecewiseFunction) -> tuple[np.ndarray, np.ndarray]:
        return (conditional_expectation(self.grid, f, self.a),
                conditional_expectation(self.grid, f, self.b))

    def v_vectors(self, f: PiecewiseFunction) -> tuple[np.ndarray, np.ndarray]:
        """V1 = E[f|A] - P_{B|A} E[f|B] and V2 = E[f|B] - P_{A|B} E[f|A]."""
        ea, eb = self.cond(f)
        return ea - self.pba @ eb, eb - self.pab @ ea


def spectral_gap(model: TwoMarginalModel) -> tuple[float, float]:
    """Second-largest eigenvalue moduli (lambda_1, lambda_2) of mA and mB."""
    return (second_eigenvalue_modulus(model.m_a, model.p_a),
            second_eigenvalue_modulus(model.m_b, model.p_b))


def _geometric_sum(matrix, v, N) -> np.ndarray:
    out = np.zeros_like(v)
    term = v.copy()
    for _ in range(N + 1):
        out += term
        term = matrix @ term
    return out


def _power_apply(matrix, v, power) -> np.ndarray:
    if power < 0:
        return np.zeros_like(v)
    return np.linalg.matrix_power(matrix, power) @ v


def s_matrices_finite(model: TwoMarginalModel, f: PiecewiseFunction, N: int) -> SVectors:
    """(S1_even^(N), S2_odd^(N), S1_odd^(N), S2_even^(N)); negative N gives empty sums."""
    N = int(N)
    ea, eb = model.cond(f)
    v1, v2 = model.v_vectors(f)
    s1e = _geometric_sum(model.m_a, v1, N)
    s2o = _geometric_sum(model.m_b, v2, N)
    s1o = s1e + _power_apply(model.m_a, ea, N + 1)
    s2e = s2o + _power_apply(model.m_b, eb, N + 1)
    return SVectors(s1e, s2o, s1o, s2e)


def gn_coefficients(model: TwoMarginalModel, f, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient vectors (a, b) with G^(N)(f) = G(f) - a'G[A] - b'G[B]."""
    m, odd = divmod(int(N), 2)
    if odd:
        s = s_matrices_finite(model, f, m - 1)
        return s.s1_odd, s.s2_odd
    sa = s_matrices_finite(model, f, m - 1)
    sb = s_matrices_finite(model, f, m - 2)
    return sa.s1_even, sb.s2_even


def _bridge_blocks(model: TwoMarginalModel, f):
    """Cov(G(f), G[A]) and Cov(G(f), G[B])."""
    pf = expectation(model.grid, f)
    ea, eb = model.cond(f)
    return model.p_a * (ea - pf), model.p_b * (eb - pf)


def _linear_covariance(model: TwoMarginalModel, f, g, coef_f, coef_g) -> float:
    af, bf = coef_f
    ag, bg = coef_g
    va = np.diag(model.p_a) - np.outer(model.p_a, model.p_a)
    vb = np.diag(model.p_b) - np.outer(model.p_b, model.p_b)
    cab = model.joint - np.outer(model.p_a, model.p_b)
    fa, fb = _bridge_blocks(model, f)
    ga, gb = _bridge_blocks(model, g)
    return float(
        bridge_covariance(model.grid, f, g)
        - af @ ga - bf @ gb - ag @ fa - bg @ fb
        + af @ va @ ag + bf @ vb @ bg + af @ cab @ bg + ag @ cab @ bf
    )


def gn_two_marginal_covariance(model: TwoMarginalModel, f, g, N: int) -> float:
    """Cov(G^(N)(f), G^(N)(g)) for the alternating schedule A, B, A, ... of length N."""
    return _linear_covariance(model, f, g, gn_coefficients(model, f, N), gn_coefficients(model, g, N))


def _check_ergodic(model: TwoMarginalModel) -> tuple[float, float]:
    lam = spectral_gap(model)
    if max(lam) >= 1 - ERGODIC_MARGIN:
        raise ErgodicityError(
            f"composed conditional matrices are not ergodic (lambda = {max(lam):.12g})"
        )
    return lam


def limit_s(model: TwoMarginalModel, f: PiecewiseFunction) -> SVectors:
    """Limits of the S vectors as N -> infinity.

    S1_even solves (I - mA) x = V1 with P(A)'x = 0; adding the rank-one
    term 1 P(A)' makes the system nonsingular with the same solution.
    """
    _check_ergodic(model)
    v1, v2 = model.v_vectors(f)
    ones_a, ones_b = np.ones(len(model.p_a)), np.ones(len(model.p_b))
    s1e = np.linalg.solve(np.eye(len(v1)) - model.m_a + np.outer(ones_a, model.p_a), v1)
    s2o = np.linalg.solve(np.eye(len(v2)) - model.m_b + np.outer(ones_b, model.p_b), v2)
    pf = expectation(model.grid, f)
    return SVectors(s1e, s2o, s1e + pf * ones_a, s2o + pf * ones_b)


def g_infinity_covariance(model: TwoMarginalModel, f, g) -> float:
    """Cov(G^(inf)(f), G^(inf)(g)) with G^(inf)(f) = G(f) - S1_even' G[A] - S2_odd' G[B]."""
    sf, sg = limit_s(model, f), limit_s(model, g)
    return _linear_covariance(model, f, g, (sf.s1_even, sf.s2_odd), (sg.s1_even, sg.s2_odd))


class DecayFit(NamedTuple):
    rate: float
    constant: float
    r2: float
    ns: np.ndarray
    errors: np.ndarray


def fit_geometric_rate(ns, errors, floor=1e-13) -> DecayFit:
    """Least-squares fit of log(error) = log(c) + N log(rate) over errors above ``floor``."""
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > floor
    if keep.sum() < 3:
        return DecayFit(0.0, float(errors.max(initial=0.0)), 1.0, ns, errors)
    x, y = ns[keep], np.log(errors[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / ss if ss > 0 else 1.0
    return DecayFit(float(np.exp(slope)), float(np.exp(intercept)), float(r2), ns, errors)


def s_decay(model: TwoMarginalModel, f, n_max=60) -> DecayFit:
    """Fit ||S^(N) - S||_inf over N = 0..n_max for every S vector of ``f``."""
    lim = limit_s(model, f)
    ns = np.arange(n_max + 1)
    errs = []
    for N in ns:
        fin = s_matrices_finite(model, f, int(N))
        errs.append(max(np.abs(a - b).max() for a, b in zip(fin, lim)))
    return fit_geometric_rate(ns, errs)


def covariance_decay(model: TwoMarginalModel, f, g, n_max=60, n_min=2) -> DecayFit:
    """Geometric fit of |Cov(G^(N)) - Cov(G^(inf))| over N = n_min..n_max.

    The S sums gain one power of the composed matrix every two steps, so
    sqrt(max(lambda_1, lambda_2)) per step bounds the rate. The observed rate
    is usually near lambda: G^(inf)(f) is uncorrelated with G[A] and G[B],
    so the first-order term of the gap cancels.
    """
    target = g_infinity_covariance(model, f, g)
    ns = np.arange(n_min, n_max + 1)
    errs = [abs(gn_two_marginal_covariance(model, f, g, int(N)) - target) for N in ns]
    return fit_geometric_rate(ns, errs)


def envelope_constant(model: TwoMarginalModel, fit: DecayFit) -> float:
    """Smallest c with error_N <= c * max(lambda)^(N/2) over the fitted range."""
    lam = max(spectral_gap(model))
    if lam == 0:
        return float(fit.errors.max(initial=0.0))
    return float(np.max(fit.errors / lam ** (fit.ns / 2)))
