"""Joint state tracking and incremental dynamics learning.

Each measurement drives one iteration: optional ESS-triggered resample,
propagate through the current learned dynamics, reweight by the measurement,
resample to equally weighted lag-1 pairs, then take a gradient step on the
sparse-GP bound using those pairs as the mini-batch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .gp_core import KernelParams, MeanFn, MeanKind, Smoothness
from .particle_filter import InitialDistribution, MeasurementModel, ParticleSet, filter_step
from .svsgp import (
    InducingSet,
    MiniBatch,
    OptimizerState,
    SparseGPModel,
    elbo_and_grad,
    init_model,
    model_from_dict,
    model_to_dict,
    optimizer_from_dict,
    optimizer_to_dict,
    sgd_step,
)


@dataclass(frozen=True)
class InitConfig:
    """Everything needed to start (and keep running) the identification loop.

    ``lengthscale=None`` means a tenth of the inducing-grid span. With
    ``normalize_grad`` the bound's gradient is divided by the effective number
    of pairs (``scale * N``) before the step, so the learning rate does not
    depend on the particle count.
    """

    p0: InitialDistribution = field(default_factory=InitialDistribution)
    n_particles: int = 500
    grid_lo: float = 0.0
    grid_hi: float = 1.0
    n_inducing: int = 30
    signal_variance: float = 1.0
    lengthscale: float | None = None
    smoothness: str = "five_halves"
    mean: str = "identity"
    noise_var: float = 0.1
    base_rate: float = 0.05
    decay: float = 1000.0
    hyper_rate_mult: float = 0.1
    meas_noise_var: float = 1e-3
    ess_threshold: float = 0.5
    resample: str = "systematic"
    inner_steps: int = 1
    scale: float = 1.0
    normalize_grad: bool = True
    learn: bool = True

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if self.n_inducing < 1:
            raise ValueError("need at least one inducing point")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.resample not in ("systematic", "multinomial"):
            raise ValueError(f"unknown resampling scheme {self.resample!r}")
        if not (self.noise_var > 0 and self.meas_noise_var > 0 and self.signal_variance > 0 and self.scale > 0):
            raise ValueError("variances and scale must be positive")
        Smoothness(self.smoothness)
        MeanKind(self.mean)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p0"] = self.p0.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InitConfig":
        d = dict(d)
        if "p0" in d and isinstance(d["p0"], dict):
            d["p0"] = InitialDistribution(**d["p0"])
        return cls(**d)

    def initial_model(self) -> SparseGPModel:
        inducing = InducingSet.grid(self.grid_lo, self.grid_hi, self.n_inducing)
        ls = self.lengthscale if self.lengthscale is not None else 0.1 * inducing.span
        kernel = KernelParams(self.signal_variance, ls, Smoothness(self.smoothness))
        return init_model(inducing, kernel, MeanFn(MeanKind(self.mean)), self.noise_var)

    def optimizer(self) -> OptimizerState:
        return OptimizerState(0, self.base_rate, self.decay, self.hyper_rate_mult)


@dataclass(frozen=True, eq=False)
class StepInfo:
    estimate: float
    batch: MiniBatch
    elbo: float
    degenerate: bool
    early_resampled: bool


@dataclass(frozen=True, eq=False)
class IdentState:
    particles: ParticleSet
    dyn: SparseGPModel
    opt: OptimizerState
    mm: MeasurementModel
    cfg: InitConfig
    t: int = 0
    info: StepInfo | None = None


def init(cfg: InitConfig, rng: np.random.Generator) -> IdentState:
    """Particles i.i.d. from ``p0`` with uniform weights; dynamics at the prior."""
    particles = ParticleSet.from_states(cfg.p0.sample(rng, cfg.n_particles))
    return IdentState(particles, cfg.initial_model(), cfg.optimizer(), MeasurementModel(cfg.meas_noise_var), cfg)


def reset_particles(s: IdentState, rng: np.random.Generator) -> IdentState:
    """Fresh particle cloud from ``p0``; model and optimizer carry over."""
    particles = ParticleSet.from_states(s.cfg.p0.sample(rng, s.cfg.n_particles))
    return replace(s, particles=particles, info=None)


def step(s: IdentState, z: float, rng: np.random.Generator) -> IdentState:
    if not np.isfinite(z):
        raise ValueError("measurement must be finite")
    cfg = s.cfg
    fs = filter_step(s.particles, z, s.dyn, s.mm, rng, cfg.ess_threshold, cfg.resample)
    batch = MiniBatch(fs.particles.x_prev, fs.particles.x_curr)
    value, grad = elbo_and_grad(s.dyn, batch, cfg.scale)

    dyn, opt = s.dyn, s.opt
    if cfg.learn:
        norm = 1.0 / (cfg.scale * len(batch)) if cfg.normalize_grad else 1.0
        for k in range(cfg.inner_steps):
            if k > 0:
                grad = elbo_and_grad(dyn, batch, cfg.scale)[1]
            dyn, opt = sgd_step(dyn, grad.scaled(norm), opt)

    info = StepInfo(fs.estimate, batch, value, fs.degenerate, fs.early_resampled)
    return IdentState(fs.particles, dyn, opt, s.mm, cfg, s.t + 1, info)


def run_trajectory(s: IdentState, zs, rng: np.random.Generator):
    """Process one trajectory's measurements starting from a fresh particle cloud.

    Returns ``(state, estimates, elbos)``; an empty sequence leaves the state untouched.
    """
    zs = np.asarray(zs, dtype=float).reshape(-1)
    if zs.size == 0:
        return s, np.zeros(0), np.zeros(0)
    s = reset_particles(s, rng)
    est = np.empty(zs.size)
    elbos = np.empty(zs.size)
    for i, z in enumerate(zs):
        s = step(s, z, rng)
        est[i] = s.info.estimate
        elbos[i] = s.info.elbo
    return s, est, elbos


def run_sequence(s: IdentState, zs, rng: np.random.Generator):
    """Like ``run_trajectory`` but continues the current particle cloud."""
    zs = np.asarray(zs, dtype=float).reshape(-1)
    est = np.empty(zs.size)
    elbos = np.empty(zs.size)
    for i, z in enumerate(zs):
        s = step(s, z, rng)
        est[i] = s.info.estimate
        elbos[i] = s.info.elbo
    return s, est, elbos


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, s: IdentState, rng: np.random.Generator) -> None:
    if s.mm.g is not None:
        raise ValueError("only the identity measurement function can be checkpointed")
    doc = {
        "t": s.t,
        "config": s.cfg.to_dict(),
        "model": model_to_dict(s.dyn),
        "optimizer": optimizer_to_dict(s.opt),
        "particles": {
            "x_curr": s.particles.x_curr.tolist(),
            "x_prev": s.particles.x_prev.tolist(),
            "weights": s.particles.weights.tolist(),
            "degenerate": s.particles.degenerate,
        },
        "meas_noise_var": s.mm.meas_noise_var,
        "rng": rng.bit_generator.state,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path) -> tuple[IdentState, np.random.Generator]:
    doc = json.loads(Path(path).read_text())
    p = doc["particles"]
    particles = ParticleSet(np.array(p["x_curr"]), np.array(p["x_prev"]), np.array(p["weights"]), p["degenerate"])
    state = IdentState(
        particles,
        model_from_dict(doc["model"]),
        optimizer_from_dict(doc["optimizer"]),
        MeasurementModel(float(doc["meas_noise_var"])),
        InitConfig.from_dict(doc["config"]),
        int(doc["t"]),
    )
    rng_state = doc["rng"]
    bitgen = getattr(np.random, rng_state["bit_generator"])()
    bitgen.state = rng_state
    return state, np.random.Generator(bitgen)
