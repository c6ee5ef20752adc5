"""Wasserstein distances on a line and on a grid.

On a line the closed form (area between CDFs) is used; on a grid a
min-cost transshipment over neighbouring cells. Both are checked against a
linear-programming transport solver.
Run: python3 demos/03_transport.py
"""

import numpy as np

from masterfp.core import StateSpace
from masterfp.metrics import GroundMetric, wasserstein, wasserstein_1d, wasserstein_min_cost_flow
from masterfp.oracles import transport_lp

rng = np.random.default_rng(0)

line = GroundMetric(StateSpace.line(8), normalized=False)
mu, nu = rng.dirichlet(np.ones(8), size=2)
print("line, closed form :", wasserstein_1d(mu, nu))
print("line, min-cost    :", wasserstein_min_cost_flow(mu, nu, line)[0])
print("line, LP          :", transport_lp(mu, nu, line.matrix()))

grid = GroundMetric(StateSpace.grid(4, 4))
mu, nu = rng.dirichlet(np.ones(16), size=2)
print("\n4x4 grid (distances divided by the diameter)")
print("grid, min-cost    :", wasserstein(mu, nu, grid))
print("grid, LP          :", transport_lp(mu, nu, grid.matrix()))

# a point mass moved three cells costs three cell-steps
a, b = np.zeros(16), np.zeros(16)
a[0], b[3] = 1.0, 1.0
print("unit mass moved 3 cells:", wasserstein(a, b, grid) * StateSpace.grid(4, 4).diameter())
