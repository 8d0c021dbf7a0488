"""Rake a 2x3 table to known row and column totals.

Each ratio step rescales one margin exactly; alternating the two margins
converges to the table closest to the start in relative entropy.
"""
import numpy as np

from rakingratio.appendix import a1_grid, a1_targets
from rakingratio.raking import rake_until_converged

grid, targets = a1_grid(), a1_targets()
print("start\n", grid.table().round(3))

result = rake_until_converged(grid, targets, tol=1e-9)
for state in result.trace[1:4]:
    print(f"after step {state.iteration} (KL increment {state.kl_history[-1]:.2e})")
    print(state.measure.table().round(3))

print(f"converged after {result.iterations} steps")
print(result.state.measure.table().round(3))
print("row sums", result.state.measure.marginal(0).round(6),
      "col sums", result.state.measure.marginal(1).round(6))

# the stopping rule matters: a looser tolerance stops much earlier
for tol in (5e-3, 5e-4, 1e-6):
    print(f"tol {tol:g}: {rake_until_converged(grid, targets, tol=tol).iterations} steps")
