"""
The 8 pi threshold on the disc
==============================

Radial steady states of d v'' + d v'/r - v + m exp(v) / int exp(v) = 0,
followed down in m from 1.5 x 8 pi. The nonconstant branch ends near 8 pi;
the crossing moves towards it as the mesh is refined.
"""

import math

import numpy as np

from kslab.grid import Domain, build_grid
from kslab.steady import SteadyProblem, continuation

target = 8 * math.pi
values = target * np.linspace(1.5, 0.5, 11)
for n in (100, 200, 400):
    grid = build_grid(Domain.disc(1.0), n)
    branch = continuation(SteadyProblem("exponential_radial", 1.0, 1.0, grid), values, refine=6)
    lo, hi = branch.threshold
    peak = branch.points[0].max_v
    print(f"N = {n:3d}: branch lost between {lo / target:.4f} and {hi / target:.4f} x 8 pi "
          f"(peak v at 1.5 x 8 pi: {peak:.3f})")
