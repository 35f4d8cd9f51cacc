"""
Exact GP regression with a Matern kernel
========================================

The exact posterior is the reference every sparse approximation is measured
against. Here we fit a handful of noisy points and look at the posterior
mean and standard deviation on a grid.
"""

import numpy as np

from online_gpssm.gp_core import Dataset, KernelParams, MeanFn, gp_log_marginal, gp_posterior

rng = np.random.default_rng(0)
X = np.sort(rng.uniform(-3, 3, 12))
y = np.sin(X) + 0.1 * rng.standard_normal(12)

kernel = KernelParams(signal_variance=1.0, lengthscale=1.0, smoothness="five_halves")
data = Dataset(X, y)

###############################################################################
# Posterior on a grid. A zero mean is the usual regression choice; the
# state-space code defaults to the identity mean instead.
grid = np.linspace(-4, 4, 9)
mu, cov = gp_posterior(data, kernel, MeanFn("zero"), 0.01, grid)
for x, m, s in zip(grid, mu, np.sqrt(np.diag(cov))):
    print(f"x={x:+.1f}  mean={m:+.3f}  sd={s:.3f}  sin(x)={np.sin(x):+.3f}")

###############################################################################
# The log marginal likelihood picks a sensible lengthscale.
for ls in [0.1, 0.3, 1.0, 3.0, 10.0]:
    lml = gp_log_marginal(data, KernelParams(1.0, ls), MeanFn("zero"), 0.01)
    print(f"lengthscale {ls:5.1f}: log p(y) = {lml:8.2f}")
