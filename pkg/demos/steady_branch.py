"""
Spikes appearing as d decreases
===============================

For gamma(v) = v^-2 the steady problem reduces to d w'' - w + w^2 = 0 on the
unit interval. The constant w = 1 is the only solution until d passes
1/pi^2, where a boundary spike branches off. With k = 0.8 nothing happens.
"""

import math

import numpy as np

from kslab.grid import Domain, build_grid
from kslab.steady import SteadyProblem, continuation, rescale_to_nonlocal

grid = build_grid(Domain.interval(1.0), 200)
values = np.linspace(0.15, 0.02, 14)

branch = continuation(SteadyProblem("algebraic", 0.15, 1.0, grid, k=2.0), values, refine=10)
print("   d        max w / min w")
for point in branch.points:
    print(f"  {point.parameter:.4f}   {point.max_v / point.min_v:8.4f}")
lo, hi = branch.threshold
print(f"departure from the constant between d = {lo:.5f} and {hi:.5f}; 1/pi^2 = {1 / math.pi**2:.5f}")

# any mass is reached by rescaling a local spike
w = branch.points[-1].solution.local
for m in (0.5, 2.0, 5.0):
    sol = rescale_to_nonlocal(w, 2.0, m, branch.points[-1].parameter)
    print(f"  m = {m}: max v = {sol.v.max():.4f}, residual {sol.residual:.1e}")

flat = continuation(SteadyProblem("algebraic", 0.5, 1.0, grid, k=0.8), np.linspace(0.5, 0.02, 14))
print(f"k = 0.8: largest |amplitude - 1| along the branch {np.abs(flat.amplitudes() - 1).max():.1e}")
