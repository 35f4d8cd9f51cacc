"""
Checking the analytic gradient
==============================

Each parameter block of the bound gradient is compared with central finite
differences on random problems. A deliberately corrupted block shows what a
failure looks like. ``online-gpssm gradcheck`` runs the same check.
"""

from online_gpssm import cli

cfg = cli.resolve_config("gradcheck", seed=0)
for block, err in cli.run_gradcheck(cfg).items():
    print(f"{block:14s} max rel. error {err:.1e}")

###############################################################################
# Corrupting the kernel block makes only that block fail.
cfg["corrupt"] = "log_kernel"
cfg["n_configs"] = 3
for block, err in cli.run_gradcheck(cfg).items():
    print(f"{block:14s} max rel. error {err:.1e}  {'FAIL' if err > cfg['tolerance'] else 'ok'}")
