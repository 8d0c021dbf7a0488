"""Alternating two partitions: the raked limit converges geometrically.

The rate per full cycle is the second eigenvalue modulus of the composed
conditional matrix, so the covariance gap is bounded by c * lambda^(N/2).
In practice it shrinks like lambda^N: the limit is uncorrelated with the
margin fluctuations, so only the squared S error survives.
"""
from rakingratio.appendix import a2_function, a2_grid
from rakingratio.two_marginal import (
    TwoMarginalModel,
    covariance_decay,
    g_infinity_covariance,
    gn_two_marginal_covariance,
    spectral_gap,
)

grid, f = a2_grid(), a2_function()
tm = TwoMarginalModel.from_grid(grid)
lam = max(spectral_gap(tm))
inf = g_infinity_covariance(tm, f, f)
print(f"lambda = {lam:.4f}, V(G^inf) = {inf:.6f}")
for N in (1, 2, 4, 8, 16):
    v = gn_two_marginal_covariance(tm, f, f, N)
    print(f"N={N:2d}  V={v:.8f}  gap={abs(v - inf):.2e}")

fit = covariance_decay(tm, f, f, n_max=40)
print(f"fitted rate per step {fit.rate:.4f}  (bound sqrt(lambda) = {lam ** 0.5:.4f})")
