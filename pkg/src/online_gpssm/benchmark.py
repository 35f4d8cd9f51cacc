"""Ground-truth simulators and evaluation metrics for the benchmark experiments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import linalg

from .gp_core import LOG_2PI, safe_cholesky
from .particle_filter import InitialDistribution
from .svsgp import SparseGPModel, joint_predictive, predict

MSE_DB_FLOOR = -120.0


def testfunc_eval(x):
    """Kinked test map: ``x + 1`` below 4, ``-4x + 21`` from 4 on."""
    x = np.asarray(x, dtype=float)
    out = np.where(x < 4.0, x + 1.0, -4.0 * x + 21.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class PiecewiseLinearModel:
    """``f(x) = x + b(x)`` with ``b`` the linear interpolant of ``(a_i, b_i)``.

    Outside ``[a_0, a_n]`` the offset is held at the nearest end value.
    """

    breakpoints: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.breakpoints, dtype=float)
        b = np.asarray(self.offsets, dtype=float)
        if a.shape != b.shape or a.ndim != 1 or a.size < 2:
            raise ValueError("need matching 1-D breakpoints and offsets, at least two of each")
        if np.any(np.diff(a) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", a)
        object.__setattr__(self, "offsets", b)

    def __call__(self, x):
        return piecewise_eval(self, x)

    @property
    def n_segments(self) -> int:
        return self.breakpoints.size - 1


def piecewise_eval(mdl: PiecewiseLinearModel, x):
    x = np.asarray(x, dtype=float)
    out = x + np.interp(x, mdl.breakpoints, mdl.offsets)
    return float(out) if out.ndim == 0 else out


def sample_random_model(
    rng: np.random.Generator,
    n: int = 20,
    spacing: tuple[float, float] = (0.08, 0.15),
    offset_var: float = 1e-3,
) -> PiecewiseLinearModel:
    """Random smooth-ish dynamics: breakpoint gaps ~ U(spacing), offset steps ~ N(0, offset_var).

    Anchored at ``a_0 = 0``, ``b_0 = 0``.
    """
    gaps = rng.uniform(spacing[0], spacing[1], n)
    steps = np.sqrt(offset_var) * rng.standard_normal(n)
    a = np.concatenate([[0.0], np.cumsum(gaps)])
    b = np.concatenate([[0.0], np.cumsum(steps)])
    return PiecewiseLinearModel(a, b)


Dynamics = Union[str, PiecewiseLinearModel, Callable]


@dataclass(frozen=True)
class SystemSpec:
    """Simulated SSM ``x_t = f(x_{t-1}) + w``, ``z_t = x_t + v``.

    ``dynamics`` is ``"testfunc"``, a ``PiecewiseLinearModel`` or any callable.
    When ``domain`` is set, a trajectory ends before its first state outside it.
    """

    dynamics: Dynamics = "testfunc"
    process_noise_var: float = 1.0
    meas_noise_var: float = 1.0
    init: InitialDistribution = field(default_factory=InitialDistribution)
    domain: tuple[float, float] | None = None

    def __post_init__(self):
        if not (self.process_noise_var > 0 and self.meas_noise_var > 0):
            raise ValueError("noise variances must be positive")

    @property
    def f(self) -> Callable:
        if isinstance(self.dynamics, str):
            if self.dynamics != "testfunc":
                raise ValueError(f"unknown dynamics {self.dynamics!r}")
            return testfunc_eval
        return self.dynamics


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_0..x_T`` and measurements ``z_1..z_T``."""

    states: np.ndarray
    measurements: np.ndarray
    truncated: bool = False

    def __len__(self):
        return self.measurements.size

    @property
    def pairs(self) -> np.ndarray:
        """``(T, 2)`` array of true ``(x_{t-1}, x_t)`` transitions."""
        return np.column_stack([self.states[:-1], self.states[1:]])


def simulate(spec: SystemSpec, T: int, rng: np.random.Generator) -> Trajectory:
    if T < 1:
        raise ValueError("T must be at least 1")
    f = spec.f
    sw = np.sqrt(spec.process_noise_var)
    sv = np.sqrt(spec.meas_noise_var)
    x = float(spec.init.sample(rng))
    states, meas = [x], []
    truncated = False
    for _ in range(T):
        x_new = float(f(x)) + sw * rng.standard_normal()
        z = x_new + sv * rng.standard_normal()
        if spec.domain is not None and not (spec.domain[0] <= x_new <= spec.domain[1]):
            truncated = True
            break
        states.append(x_new)
        meas.append(z)
        x = x_new
    return Trajectory(np.array(states), np.array(meas), truncated)


# ---------------------------------------------------------------------------
# metrics


def _pairs(test) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(test, dtype=float).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise ValueError("empty test set")
    return arr[:, 0], arr[:, 1]


def test_mse(dyn, test) -> float:
    """Mean squared one-step prediction error on ``(x_{t-1}, x_t)`` pairs."""
    x_prev, x_next = _pairs(test)
    mu, _ = dyn.predict(x_prev)
    return float(np.mean((x_next - mu) ** 2))


def test_mll(dyn, test) -> float:
    """Mean predictive log density of ``x_t`` given ``x_{t-1}``."""
    x_prev, x_next = _pairs(test)
    mu, var = dyn.predict(x_prev)
    return float(np.mean(-0.5 * (LOG_2PI + np.log(var) + (x_next - mu) ** 2 / var)))


# pytest must not collect the metric functions above
testfunc_eval.__test__ = False
test_mse.__test__ = False
test_mll.__test__ = False


def tracking_mse_db(estimates, truth, floor: float = MSE_DB_FLOOR) -> float:
    """``10 log10(mean squared tracking error)``, clamped below at ``floor``."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {tru.shape}")
    if est.size == 0:
        raise ValueError("need at least one step")
    mse = np.mean((est - tru) ** 2)
    if mse <= 0:
        return floor
    return max(floor, float(10.0 * np.log10(mse)))


def gaussian_logpdf(y, mu, cov) -> float:
    L = safe_cholesky(cov)
    r = linalg.solve_triangular(L, np.asarray(y) - mu, lower=True)
    return float(-0.5 * r @ r - np.sum(np.log(np.diag(L))) - 0.5 * r.size * LOG_2PI)


def groundtruth_likelihood(
    dyn: SparseGPModel,
    f: Callable,
    n_points: int = 10_000,
    block_size: int = 500,
    interval: tuple[float, float] = (0.0, 1.0),
    X=None,
) -> float:
    """Log density of ``f`` on a uniform grid under the model's joint predictive.

    The grid is split into consecutive blocks of ``block_size`` points; each
    block uses its full joint predictive covariance (noise included) and blocks
    are treated as independent.
    """
    if X is None:
        if n_points < 1:
            raise ValueError("n_points must be at least 1")
        X = np.linspace(interval[0], interval[1], n_points)
    X = np.asarray(X, dtype=float)
    y = np.asarray(f(X), dtype=float)
    total = 0.0
    for start in range(0, X.size, block_size):
        sl = slice(start, start + block_size)
        mu, cov = joint_predictive(dyn, X[sl])
        total += gaussian_logpdf(y[sl], mu, cov)
    return total


def knn_average(points, k: int, queries=None) -> tuple[np.ndarray, np.ndarray]:
    """k-nearest-neighbour average of ``y`` over ``x``.

    ``points`` is an ``(n, 2)`` array of ``(x, y)``. Returns ``(queries, smoothed)``;
    queries default to the sorted ``x`` values. Ties in distance go to the
    earlier point.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("no points to smooth")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    q = np.sort(pts[:, 0]) if queries is None else np.asarray(queries, dtype=float).reshape(-1)
    out = np.empty(q.size)
    for start in range(0, q.size, 1024):
        d = np.abs(q[start : start + 1024, None] - pts[None, :, 0])
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        out[start : start + 1024] = pts[nearest, 1].mean(axis=1)
    return q, out


def predictive_curve(dyn: SparseGPModel, X):
    """Mean and standard deviation of the learned transition on ``X``."""
    mu, var = predict(dyn, np.asarray(X, dtype=float))
    return mu, np.sqrt(var)
