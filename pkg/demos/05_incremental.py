"""
Incremental learning across trajectories
========================================

Random piecewise-linear maps ``f(x) = x + b(x)`` generate short trajectories
on ``[0, 1]``. Each trajectory restarts the particle cloud but keeps the
learned model, so the fit to the true map improves as measurements pile up.
This is a reduced version of ``online-gpssm incremental``.
"""

import numpy as np

from online_gpssm import cli

cfg = cli.resolve_config("incremental", seed=0)
cfg["counts"]["n_trajectories"] = 20
cfg["metrics"]["gt_points"] = 2000
rows, truth = cli.run_incremental_model(cfg, 0, np.random.SeedSequence(0))

print(" traj  #M   tracking dB   log-lik of true map")
for model_id, traj, seen, mse_db, loglik in rows:
    print(f"{traj:5d} {seen:4d}   {mse_db:8.2f}     {loglik:10.1f}")
