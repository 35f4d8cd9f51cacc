"""SIR particle filter over lag-1 particle pairs ``(x_t, x_{t-1})``.

Dynamics are duck-typed: anything with ``predict(x) -> (mean, variance)``
accepting an array of states works (a ``SparseGPModel`` or ``KnownDynamics``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gp_core import LOG_2PI

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class InitialDistribution:
    """Initial-state density: ``uniform(a, b)`` or ``gaussian(mean=a, var=b)``."""

    kind: str = "uniform"
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind == "uniform":
            if not self.b > self.a:
                raise ValueError("uniform initial distribution needs b > a")
        elif self.kind == "gaussian":
            if self.b < 0:
                raise ValueError("gaussian initial variance must be non-negative")
        else:
            raise ValueError(f"unknown initial distribution {self.kind!r}")

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return self.a + np.sqrt(max(self.b, VAR_FLOOR)) * rng.standard_normal(size)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Weighted particle pairs; ``x_curr[i]`` is x_t and ``x_prev[i]`` is x_{t-1} of particle i."""

    x_curr: np.ndarray
    x_prev: np.ndarray
    weights: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        xc = np.asarray(self.x_curr, dtype=float).reshape(-1)
        xp = np.asarray(self.x_prev, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (xc.size == xp.size == w.size):
            raise ValueError("particle arrays differ in length")
        if xc.size < 2:
            raise ValueError("need at least two particles")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if not (np.all(np.isfinite(xc)) and np.all(np.isfinite(xp))):
            raise ValueError("particles must be finite")
        object.__setattr__(self, "x_curr", xc)
        object.__setattr__(self, "x_prev", xp)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_states(cls, x) -> "ParticleSet":
        """Uniformly weighted set with ``x_prev = x_curr``."""
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(x, x.copy(), np.full(x.size, 1.0 / x.size))

    def __len__(self):
        return self.x_curr.size

    @property
    def pairs(self) -> np.ndarray:
        """``(N, 2)`` array of ``(x_prev, x_curr)`` rows, i.e. (input, target) of the transition."""
        return np.column_stack([self.x_prev, self.x_curr])


@dataclass(frozen=True)
class MeasurementModel:
    """``z = g(x) + nu`` with ``nu ~ N(0, meas_noise_var)``; ``g`` must accept arrays."""

    meas_noise_var: float = 1e-3
    g: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not self.meas_noise_var > 0:
            raise ValueError("meas_noise_var must be positive")

    def observe(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x if self.g is None else np.asarray(self.g(x), dtype=float)

    def log_likelihood(self, z: float, x) -> np.ndarray:
        r = z - self.observe(x)
        return -0.5 * (LOG_2PI + np.log(self.meas_noise_var) + r * r / self.meas_noise_var)


@dataclass(frozen=True)
class KnownDynamics:
    """Fixed transition ``x_t = f(x_{t-1}) + N(0, noise_var)``."""

    f: Callable[[np.ndarray], np.ndarray]
    noise_var: float

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        mu = np.asarray(self.f(x), dtype=float)
        return mu, np.full(mu.shape, float(self.noise_var))


def propagate(ps: ParticleSet, dyn, rng: np.random.Generator) -> ParticleSet:
    """Draw each new ``x_t`` from the dynamics' predictive; old ``x_t`` moves to ``x_{t-1}``."""
    mu, var = dyn.predict(ps.x_curr)
    std = np.sqrt(np.maximum(var, VAR_FLOOR))
    x_new = mu + std * rng.standard_normal(len(ps))
    return ParticleSet(x_new, ps.x_curr, ps.weights)


def reweight(ps: ParticleSet, z: float, mm: MeasurementModel) -> ParticleSet:
    """Multiply weights by ``p(z | x_t)`` and normalize, in log space.

    If every weight vanishes (all log-weights non-finite) the weights are reset
    to uniform and ``degenerate`` is set.
    """
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) + mm.log_likelihood(z, ps.x_curr)
    logw = np.where(np.isnan(logw), -np.inf, logw)
    top = np.max(logw)
    if not np.isfinite(top):
        n = len(ps)
        return ParticleSet(ps.x_curr, ps.x_prev, np.full(n, 1.0 / n), degenerate=True)
    w = np.exp(logw - top)
    return ParticleSet(ps.x_curr, ps.x_prev, w / np.sum(w))


def normalized(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return w / np.sum(w)


def ess(ps: ParticleSet | np.ndarray) -> float:
    """Effective sample size ``1 / sum(w^2)`` of normalized weights."""
    w = ps.weights if isinstance(ps, ParticleSet) else np.asarray(ps, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_indices(weights, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform offset, N evenly spaced pointers."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    cum = np.cumsum(w)
    cum[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cum, positions, side="right")


def multinomial_indices(weights, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    counts = rng.multinomial(w.size, w / w.sum())
    return np.repeat(np.arange(w.size), counts)


RESAMPLERS = {"systematic": systematic_indices, "multinomial": multinomial_indices}


def resample_minkl(ps: ParticleSet, rng: np.random.Generator, method: str = "systematic") -> ParticleSet:
    """Equally weighted copy of ``ps`` with counts approximately proportional to the weights.

    Pairs are resampled jointly, so each ``(x_t, x_{t-1})`` stays together.
    """
    idx = RESAMPLERS[method](ps.weights, rng)
    n = len(ps)
    return ParticleSet(ps.x_curr[idx], ps.x_prev[idx], np.full(n, 1.0 / n), ps.degenerate)


def replication_counts(idx, n: int) -> np.ndarray:
    return np.bincount(np.asarray(idx), minlength=n)


def resampling_kl(weights, counts) -> float:
    """``sum_i w_i log(N w_i / eta_i)`` between the weighted and the resampled sets.

    Infinite when a particle with positive weight gets no copies.
    """
    w = np.asarray(weights, dtype=float)
    eta = np.asarray(counts, dtype=float)
    n = eta.sum()
    pos = w > 0
    if np.any(eta[pos] == 0):
        return float("inf")
    return float(np.sum(w[pos] * np.log(n * w[pos] / eta[pos])))


def estimate(ps: ParticleSet) -> float:
    """Weighted mean of ``x_t``."""
    return float(np.dot(ps.weights, ps.x_curr))


@dataclass(frozen=True, eq=False)
class FilterStep:
    """Outcome of one propagate / reweight / resample cycle."""

    particles: ParticleSet
    weighted: ParticleSet
    estimate: float
    early_resampled: bool
    degenerate: bool


def filter_step(
    ps: ParticleSet,
    z: float,
    dyn,
    mm: MeasurementModel,
    rng: np.random.Generator,
    ess_threshold: float = 0.5,
    method: str = "systematic",
) -> FilterStep:
    """One SIR iteration returning equally weighted pairs.

    Resamples first if ESS drops below ``ess_threshold * N``, then propagates,
    reweights by the measurement, takes the weighted-mean estimate and
    resamples to equal weights.
    """
    early = ess(ps) < ess_threshold * len(ps)
    if early:
        ps = resample_minkl(ps, rng, method)
    ps = propagate(ps, dyn, rng)
    weighted = reweight(ps, z, mm)
    return FilterStep(
        particles=resample_minkl(weighted, rng, method),
        weighted=weighted,
        estimate=estimate(weighted),
        early_resampled=early,
        degenerate=weighted.degenerate,
    )


def run_filter(ps: ParticleSet, zs, dyn, mm: MeasurementModel, rng, ess_threshold=0.5, method="systematic"):
    """Filter a measurement sequence with fixed dynamics; returns ``(final set, estimates, variances)``."""
    est, var = [], []
    for z in zs:
        out = filter_step(ps, z, dyn, mm, rng, ess_threshold, method)
        w = out.weighted
        est.append(out.estimate)
        var.append(float(np.dot(w.weights, (w.x_curr - out.estimate) ** 2)))
        ps = out.particles
    return ps, np.array(est), np.array(var)
