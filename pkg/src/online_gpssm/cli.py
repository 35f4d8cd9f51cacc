"""Command-line front end for the benchmark experiments.

Each subcommand reads an optional JSON config (deep-merged over the built-in
defaults for that command), takes ``--seed`` and ``--out`` overrides, and
writes CSV files whose first line is ``# config_sha256=<hash>``. Wall-clock
runtime goes to stdout only so that output files depend on nothing but
(config, seed).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import benchmark as bm
from . import identification as ident
from .gp_core import KernelParams, MeanFn
from .particle_filter import InitialDistribution
from .svsgp import (
    BLOCKS,
    InducingSet,
    MiniBatch,
    SparseGPModel,
    VariationalParams,
    elbo,
    elbo_and_grad,
    pack_params,
    unpack_params,
)

# Table-1 identification settings; see the README for how they were chosen.
TABLE1_IDENT = {
    "p0": {"kind": "gaussian", "a": 0.0, "b": 1.0},
    "grid_lo": -12.0,
    "grid_hi": 10.0,
    "n_inducing": 20,
    "signal_variance": 10.0,
    "lengthscale": 5.0,
    "noise_var": 1.0,
    "base_rate": 1.0,
    "decay": 200.0,
    "hyper_rate_mult": 0.0,
    "inner_steps": 3,
    "meas_noise_var": 0.1,
}

INCREMENTAL_IDENT = {
    "p0": {"kind": "uniform", "a": 0.0, "b": 1.0},
    "meas_noise_var": 1e-3,
    "hyper_rate_mult": 0.0,
}

DEFAULTS = {
    "simulate": {
        "seed": 0,
        "system": {
            "dynamics": "piecewise",
            "process_noise_var": 1e-2,
            "meas_noise_var": 1e-3,
            "init": {"kind": "uniform", "a": 0.0, "b": 1.0},
            "domain": [0.0, 1.0],
        },
        "random_model": {"n": 20, "spacing": [0.08, 0.15], "offset_var": 1e-3},
        "counts": {"n_trajectories": 50, "T": 100},
    },
    "table1": {
        "seed": 0,
        "system": {
            "dynamics": "testfunc",
            "process_noise_var": 1.0,
            "meas_noise_var": 0.1,
            "init": {"kind": "gaussian", "a": 0.0, "b": 1.0},
            "domain": None,
        },
        "ident": TABLE1_IDENT,
        "counts": {"n_train": 500, "n_test": 10_000},
    },
    "incremental": {
        "seed": 0,
        "system": {
            "dynamics": "piecewise",
            "process_noise_var": 1e-2,
            "meas_noise_var": 1e-3,
            "init": {"kind": "uniform", "a": 0.0, "b": 1.0},
            "domain": [0.0, 1.0],
        },
        "random_model": {"n": 20, "spacing": [0.08, 0.15], "offset_var": 1e-3},
        "ident": INCREMENTAL_IDENT,
        "counts": {"n_models": 3, "n_trajectories": 50, "T": 100},
        "metrics": {"knn_k": 5, "gt_points": 10_000, "gt_block": 500},
        "checkpoints": True,
    },
    "gradcheck": {
        "seed": 0,
        "n_configs": 30,
        "tolerance": 1e-4,
        "step": 1e-6,
        "corrupt": None,
    },
}

COMMANDS = tuple(DEFAULTS)


# ---------------------------------------------------------------------------
# config handling


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(command: str, path=None, seed: int | None = None) -> dict:
    if command not in DEFAULTS:
        raise ValueError(f"unknown command {command!r}")
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        user = json.loads(Path(path).read_text())
        if not isinstance(user, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ValueError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg = deep_merge(cfg, user)
    if seed is not None:
        cfg["seed"] = seed
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    cfg["seed"] = int(cfg["seed"])
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_csv(path: Path, cfg: dict, header, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# config_sha256={config_hash(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def read_csv(path) -> tuple[str, list[dict]]:
    """Return ``(config_hash, rows)`` of a file written by ``write_csv``."""
    lines = Path(path).read_text().splitlines()
    digest = lines[0].split("=", 1)[1]
    return digest, list(csv.DictReader(lines[1:]))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _system(cfg: dict, dynamics=None) -> bm.SystemSpec:
    s = cfg["system"]
    domain = tuple(s["domain"]) if s.get("domain") is not None else None
    dyn = dynamics if dynamics is not None else s["dynamics"]
    return bm.SystemSpec(dyn, s["process_noise_var"], s["meas_noise_var"], InitialDistribution(**s["init"]), domain)


def _random_model(cfg: dict, rng) -> bm.PiecewiseLinearModel:
    r = cfg["random_model"]
    return bm.sample_random_model(rng, r["n"], tuple(r["spacing"]), r["offset_var"])


def _prepare_out(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: dict, out) -> list[Path]:
    """One CSV per trajectory (``t, x_true, z``) plus ``model.csv`` for piecewise systems."""
    out = _prepare_out(out)
    rng = np.random.default_rng(cfg["seed"])
    written = []
    if cfg["system"]["dynamics"] == "piecewise":
        model = _random_model(cfg, rng)
        spec = _system(cfg, model)
        path = out / "model.csv"
        write_csv(path, cfg, ["i", "a", "b"], zip(range(model.breakpoints.size), model.breakpoints, model.offsets))
        written.append(path)
    else:
        spec = _system(cfg)
    counts = cfg["counts"]
    for k in range(counts["n_trajectories"]):
        tr = bm.simulate(spec, counts["T"], rng)
        rows = [(0, tr.states[0], "")]
        rows += [(t, x, z) for t, (x, z) in enumerate(zip(tr.states[1:], tr.measurements), start=1)]
        path = out / f"trajectory_{k:03d}.csv"
        write_csv(path, cfg, ["t", "x_true", "z"], rows)
        written.append(path)
    return written


def run_table1(cfg: dict) -> tuple[float, float]:
    """Train on one sequence, score on a fresh one. Returns ``(mse, mll)``."""
    rng = np.random.default_rng(cfg["seed"])
    spec = _system(cfg)
    train = bm.simulate(spec, cfg["counts"]["n_train"], rng)
    test = bm.simulate(spec, cfg["counts"]["n_test"], rng)
    state = ident.init(ident.InitConfig.from_dict(cfg["ident"]), rng)
    state, _, _ = ident.run_sequence(state, train.measurements, rng)
    return bm.test_mse(state.dyn, test.pairs), bm.test_mll(state.dyn, test.pairs)


def cmd_table1(cfg: dict, out) -> Path:
    out = _prepare_out(out)
    start = time.perf_counter()
    mse, mll = run_table1(cfg)
    runtime = time.perf_counter() - start
    path = out / "table1.csv"
    write_csv(path, cfg, ["seed", "mse", "mll"], [(cfg["seed"], mse, mll)])
    print(f"seed={cfg['seed']} mse={mse:.4f} mll={mll:.4f} runtime={runtime:.1f}s")
    return path


def run_incremental_model(cfg: dict, model_id: int, seed_seq: np.random.SeedSequence, checkpoint=None):
    """All trajectories of one random model through one continually learned state.

    Returns rows ``(model_id, traj_id, cum_measurements, tracking_mse_db, groundtruth_loglik)``.
    """
    rng = np.random.default_rng(seed_seq)
    truth = _random_model(cfg, rng)
    spec = _system(cfg, truth)
    state = ident.init(ident.InitConfig.from_dict(cfg["ident"]), rng)
    met = cfg["metrics"]
    rows, seen = [], 0
    for k in range(cfg["counts"]["n_trajectories"]):
        tr = bm.simulate(spec, cfg["counts"]["T"], rng)
        if len(tr) == 0:
            continue
        state, est, _ = ident.run_trajectory(state, tr.measurements, rng)
        mse_db = bm.tracking_mse_db(est, tr.states[1:])
        loglik = bm.groundtruth_likelihood(state.dyn, truth, met["gt_points"], met["gt_block"])
        rows.append((model_id, k, seen, mse_db, loglik))
        seen += len(tr)
    if checkpoint is not None:
        ident.save_checkpoint(checkpoint, state, rng)
    return rows, truth


def smooth_rows(rows, k: int):
    """KNN-smooth tracking MSE and log-likelihood over cumulative measurements."""
    if not rows:
        return []
    arr = np.array([(r[2], r[3], r[4]) for r in rows], dtype=float)
    k = min(k, arr.shape[0])
    q, mse_s = bm.knn_average(arr[:, [0, 1]], k, arr[:, 0])
    _, ll_s = bm.knn_average(arr[:, [0, 2]], k, arr[:, 0])
    return list(zip(q, mse_s, ll_s))


def cmd_incremental(cfg: dict, out) -> tuple[Path, Path]:
    out = _prepare_out(out)
    start = time.perf_counter()
    children = np.random.SeedSequence(cfg["seed"]).spawn(cfg["counts"]["n_models"])
    raw, smoothed = [], []
    for i, child in enumerate(children):
        ckpt = out / f"checkpoint_model_{i:03d}.json" if cfg.get("checkpoints") else None
        rows, _ = run_incremental_model(cfg, i, child, ckpt)
        raw.extend(rows)
        smoothed.extend((i, *r) for r in smooth_rows(rows, cfg["metrics"]["knn_k"]))
    p_raw = out / "learning_curve.csv"
    p_smooth = out / "learning_curve_knn.csv"
    write_csv(
        p_raw, cfg, ["model_id", "traj_id", "cum_measurements", "tracking_mse_db", "groundtruth_loglik"], raw
    )
    write_csv(p_smooth, cfg, ["model_id", "cum_measurements", "tracking_mse_db_knn", "groundtruth_loglik_knn"], smoothed)
    print(f"models={len(children)} rows={len(raw)} runtime={time.perf_counter() - start:.1f}s")
    return p_raw, p_smooth


# ---------------------------------------------------------------------------
# gradient check


def random_gradcheck_problem(rng: np.random.Generator):
    """Random small model and batch with a generic (non-prior) variational state."""
    L = int(rng.integers(2, 9))
    n = int(rng.integers(1, 12))
    inducing = InducingSet.grid(-1.0, 1.0, L)
    kernel = KernelParams(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.3, 1.0)), rng.choice(["half", "three_halves", "five_halves"]))
    C = np.tril(rng.normal(scale=0.3, size=(L, L)), -1) + np.diag(rng.uniform(0.3, 1.0, L))
    model = SparseGPModel(
        kernel,
        MeanFn(rng.choice(["zero", "identity"])),
        float(rng.uniform(0.1, 1.0)),
        inducing,
        VariationalParams(rng.normal(size=L), C),
    )
    X = rng.uniform(-1.5, 1.5, n)
    batch = MiniBatch(X, X + rng.normal(size=n))
    scale = float(rng.uniform(0.5, 3.0))
    return model, batch, scale


def block_slices(L: int) -> dict[str, slice]:
    return {
        "log_noise_var": slice(0, 1),
        "log_kernel": slice(1, 3),
        "m": slice(3, 3 + L),
        "S_chol": slice(3 + L, 3 + L + L * (L + 1) // 2),
    }


def gradient_errors(model, batch, scale, step: float = 1e-6, corrupt: str | None = None) -> dict[str, float]:
    """Max relative error per parameter block, analytic vs central differences.

    ``corrupt`` names a block whose analytic gradient is deliberately perturbed
    (sanity hook for the detector).
    """
    theta = pack_params(model)
    analytic = elbo_and_grad(model, batch, scale)[1].as_vector()
    if corrupt is not None:
        if corrupt not in BLOCKS:
            raise ValueError(f"unknown block {corrupt!r}")
        analytic = analytic.copy()
        analytic[block_slices(model.L)[corrupt]] += 1e-2 * (1.0 + np.abs(analytic[block_slices(model.L)[corrupt]]))
    fd = np.empty_like(theta)
    for i in range(theta.size):
        h = step * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (elbo(unpack_params(model, up), batch, scale) - elbo(unpack_params(model, dn), batch, scale)) / (2 * h)
    errs = {}
    for name, sl in block_slices(model.L).items():
        denom = max(np.max(np.abs(fd[sl])), 1e-8)
        errs[name] = float(np.max(np.abs(analytic[sl] - fd[sl])) / denom)
    return errs


def run_gradcheck(cfg: dict) -> dict[str, float]:
    rng = np.random.default_rng(cfg["seed"])
    worst = dict.fromkeys(BLOCKS, 0.0)
    for _ in range(cfg["n_configs"]):
        model, batch, scale = random_gradcheck_problem(rng)
        for name, e in gradient_errors(model, batch, scale, cfg["step"], cfg["corrupt"]).items():
            worst[name] = max(worst[name], e)
    return worst


def cmd_gradcheck(cfg: dict, out) -> tuple[Path, bool]:
    out = _prepare_out(out)
    worst = run_gradcheck(cfg)
    tol = cfg["tolerance"]
    ok = all(v < tol for v in worst.values())
    path = out / "gradcheck.csv"
    write_csv(path, cfg, ["block", "max_rel_err", "passed"], [(k, v, int(v < tol)) for k, v in worst.items()])
    for k, v in worst.items():
        print(f"{k:14s} {v:.3e} {'ok' if v < tol else 'FAIL'}")
    return path, ok


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="online-gpssm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON file overriding the defaults")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, args.seed)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "table1":
            cmd_table1(cfg, args.out)
        elif args.command == "incremental":
            cmd_incremental(cfg, args.out)
        else:
            _, ok = cmd_gradcheck(cfg, args.out)
            return 0 if ok else 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
