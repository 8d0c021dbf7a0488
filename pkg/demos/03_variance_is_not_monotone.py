"""Asymptotic variance after N raking steps need not decrease with N.

Three row cells, two column cells, a function with mean 0.718125 variance
unraked. One step helps, the second hurts slightly, the third helps again.
A full cycle can never hurt: the covariance drop over a cycle is PSD.
"""
from rakingratio.appendix import a2_function, a2_grid
from rakingratio.gaussian_limit import GaussianLimitModel, check_cycle_monotonicity

grid, f = a2_grid(), a2_function()
model = GaussianLimitModel(grid, ["A", "B"] * 4)
v0 = model.covariance(f, f, 0)
for N in range(9):
    v = model.covariance(f, f, N)
    print(f"N={N}  V={v:.6f}  reduction={v0 - v:.4f}")

print("cycle 2 -> 4 never worse:", check_cycle_monotonicity(grid, model.schedule, [f], 2, 4))
