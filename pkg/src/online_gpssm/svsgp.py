"""Stochastic-variational sparse GP regression with plain gradient ascent.

The inducing values ``u = f(Z)`` have prior ``N(mean(Z), K_LL)`` and
variational posterior ``q(u) = N(m, S)`` with ``S = C C^T``, ``C`` lower
triangular with its diagonal held in log form. Per transition pair
``(x_i, y_i)`` the bound collects::

    log N(y_i | mean(x_i) + a_i^T (m - mean(Z)), s) - kt_i / (2 s) - a_i^T S a_i / (2 s)

with ``a_i = K_LL^{-1} k(Z, x_i)``, ``kt_i = k(x_i, x_i) - k_i^T a_i`` and ``s``
the noise variance, minus ``KL(q(u) || p(u))`` once per batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from .gp_core import (
    JITTER,
    LOG_2PI,
    ConditioningError,
    KernelParams,
    MeanFn,
    MeanKind,
    Smoothness,
    _as_inputs,
    kernel_diag,
    kernel_matrix,
    kernel_matrix_grads,
)

BLOCKS = ("log_noise_var", "log_kernel", "m", "S_chol")


@dataclass(frozen=True, eq=False)
class InducingSet:
    Z: np.ndarray
    layout: str = "explicit"

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 0:
            Z = Z.reshape(1)
        if Z.shape[0] < 1:
            raise ValueError("need at least one inducing point")
        if not np.all(np.isfinite(Z)):
            raise ValueError("inducing inputs must be finite")
        if self.layout == "grid" and Z.ndim == 1 and np.any(np.diff(Z) <= 0):
            raise ValueError("grid inducing points must be strictly increasing")
        object.__setattr__(self, "Z", Z)

    @classmethod
    def grid(cls, lo: float, hi: float, L: int) -> "InducingSet":
        if L == 1:
            return cls(np.array([0.5 * (lo + hi)]), "grid")
        if not hi > lo:
            raise ValueError("grid needs hi > lo")
        return cls(np.linspace(lo, hi, L), "grid")

    def __len__(self):
        return self.Z.shape[0]

    @property
    def span(self) -> float:
        Z = _as_inputs(self.Z)
        return float(np.max(np.ptp(Z, axis=0))) if len(self) > 1 else 1.0


@dataclass(frozen=True, eq=False)
class VariationalParams:
    """``q(u) = N(m, S_chol S_chol^T)`` over the inducing values."""

    m: np.ndarray
    S_chol: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(-1)
        C = np.asarray(self.S_chol, dtype=float)
        if C.shape != (m.size, m.size):
            raise ValueError(f"S_chol shape {C.shape} does not match m of length {m.size}")
        if np.any(np.triu(C, 1) != 0):
            raise ValueError("S_chol must be lower triangular")
        if np.any(np.diag(C) <= 0):
            raise ValueError("S_chol must have a positive diagonal")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "S_chol", C)

    @property
    def S(self) -> np.ndarray:
        return self.S_chol @ self.S_chol.T


@dataclass(frozen=True, eq=False)
class SparseGPModel:
    kernel: KernelParams
    mean: MeanFn
    noise_var: float
    inducing: InducingSet
    q: VariationalParams

    def __post_init__(self):
        if not (np.isfinite(self.noise_var) and self.noise_var > 0):
            raise ValueError(f"noise_var must be positive, got {self.noise_var}")
        if len(self.q.m) != len(self.inducing):
            raise ValueError("variational parameters do not match the inducing set")

    @cached_property
    def Kuu(self) -> np.ndarray:
        Z = self.inducing.Z
        return kernel_matrix(self.kernel, Z, Z) + JITTER * self.kernel.signal_variance * np.eye(len(Z))

    @cached_property
    def Kuu_chol(self) -> np.ndarray:
        try:
            return linalg.cholesky(self.Kuu, lower=True)
        except linalg.LinAlgError as exc:
            raise ConditioningError(f"K_LL not positive definite: {exc}") from None

    @cached_property
    def prior_mean(self) -> np.ndarray:
        return self.mean(self.inducing.Z)

    @cached_property
    def beta(self) -> np.ndarray:
        """``K_LL^{-1} (m - mean(Z))``."""
        return linalg.cho_solve((self.Kuu_chol, True), self.q.m - self.prior_mean)

    @property
    def L(self) -> int:
        return len(self.inducing)

    def predict(self, xstar):
        return predict(self, xstar)


def init_model(
    inducing: InducingSet,
    kernel: KernelParams | None = None,
    mean: MeanFn | None = None,
    noise_var: float = 0.1,
) -> SparseGPModel:
    """Model with ``q(u)`` equal to the prior, ``m = mean(Z)`` and ``S = K_LL`` (zero KL).

    Default kernel: unit signal variance, lengthscale a tenth of the grid span.
    """
    if kernel is None:
        kernel = KernelParams(1.0, 0.1 * inducing.span, Smoothness.FIVE_HALVES)
    mean = mean or MeanFn()
    Kuu = kernel_matrix(kernel, inducing.Z, inducing.Z) + JITTER * kernel.signal_variance * np.eye(len(inducing))
    q = VariationalParams(mean(inducing.Z), linalg.cholesky(Kuu, lower=True))
    return SparseGPModel(kernel, mean, float(noise_var), inducing, q)


def with_variational(model: SparseGPModel, m, S) -> SparseGPModel:
    S = np.asarray(S, dtype=float)
    return replace(model, q=VariationalParams(m, linalg.cholesky(0.5 * (S + S.T), lower=True)))


@dataclass(frozen=True, eq=False)
class MiniBatch:
    """Transition pairs: ``inputs`` are previous states, ``targets`` the next states."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("inputs and targets differ in length")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("mini-batch contains non-finite values")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @classmethod
    def from_pairs(cls, pairs) -> "MiniBatch":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    def __len__(self):
        return self.targets.shape[0]


@dataclass(frozen=True, eq=False)
class ElboGrad:
    """Gradient of the bound in the optimizer's parameterization.

    ``S_chol`` is lower triangular; its diagonal holds derivatives w.r.t.
    the *log* of the factor's diagonal.
    """

    log_noise_var: float
    log_kernel: np.ndarray
    m: np.ndarray
    S_chol: np.ndarray

    def blocks(self) -> dict[str, np.ndarray]:
        return {
            "log_noise_var": np.atleast_1d(self.log_noise_var),
            "log_kernel": self.log_kernel,
            "m": self.m,
            "S_chol": self.S_chol[np.tril_indices_from(self.S_chol)],
        }

    def as_vector(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.blocks().values()])

    def scaled(self, c: float) -> "ElboGrad":
        return ElboGrad(c * self.log_noise_var, c * self.log_kernel, c * self.m, c * self.S_chol)

    def __add__(self, other: "ElboGrad") -> "ElboGrad":
        return ElboGrad(
            self.log_noise_var + other.log_noise_var,
            self.log_kernel + other.log_kernel,
            self.m + other.m,
            self.S_chol + other.S_chol,
        )


def kl_q_p(model: SparseGPModel) -> float:
    """Closed-form ``KL(N(m, S) || N(mean(Z), K_LL))``."""
    R, C = model.Kuu_chol, model.q.S_chol
    RinvC = linalg.solve_triangular(R, C, lower=True)
    r = model.q.m - model.prior_mean
    return float(
        0.5 * (np.sum(RinvC * RinvC) + r @ model.beta - model.L)
        + np.sum(np.log(np.diag(R)))
        - np.sum(np.log(np.diag(C)))
    )


def _data_terms(model: SparseGPModel, X, y):
    Kx = kernel_matrix(model.kernel, model.inducing.Z, X)
    A = linalg.cho_solve((model.Kuu_chol, True), Kx)
    e = y - model.mean(X) - Kx.T @ model.beta
    CtA = model.q.S_chol.T @ A
    kt = kernel_diag(model.kernel, X) - np.sum(Kx * A, axis=0)
    Q = e @ e + np.sum(kt) + np.sum(CtA * CtA)
    return Kx, A, e, CtA, Q


def elbo(model: SparseGPModel, batch: MiniBatch | None, scale: float = 1.0) -> float:
    """Explicit-variational lower bound; ``scale`` multiplies the data sum."""
    kl = kl_q_p(model)
    if batch is None or len(batch) == 0:
        return -kl
    n = len(batch)
    s = model.noise_var
    Q = _data_terms(model, batch.inputs, batch.targets)[-1]
    data = -0.5 * n * (LOG_2PI + math.log(s)) - 0.5 * Q / s
    return float(scale * data - kl)


def elbo_and_grad(model: SparseGPModel, batch: MiniBatch, scale: float = 1.0) -> tuple[float, ElboGrad]:
    """Bound value and its analytic gradient w.r.t. every free parameter."""
    if len(batch) == 0:
        raise ValueError("gradient needs a non-empty mini-batch")
    n = len(batch)
    s = model.noise_var
    C = model.q.S_chol
    R = model.Kuu_chol
    Z, X = model.inducing.Z, batch.inputs
    beta = model.beta

    Kx, A, e, CtA, Q = _data_terms(model, X, batch.targets)
    data = -0.5 * n * (LOG_2PI + math.log(s)) - 0.5 * Q / s
    value = float(scale * data - kl_q_p(model))

    Kinv = linalg.cho_solve((R, True), np.eye(model.L))
    g_log_s = scale * (-0.5 * n + 0.5 * Q / s)
    g_m = scale * (A @ e) / s - beta

    g_C = -scale * (A @ CtA.T) / s - Kinv @ C
    g_C[np.diag_indices_from(g_C)] += 1.0 / np.diag(C)
    g_C = np.tril(g_C)
    g_C[np.diag_indices_from(g_C)] *= np.diag(C)

    # hyperparameters via the partials w.r.t. K_LL, K_LN and diag(K_NN)
    S = C @ C.T
    KinvSA = Kinv @ (S @ A)
    Ae = A @ e
    c = -0.5 * scale / s
    G_Kx = c * (-2.0 * np.outer(beta, e) - 2.0 * A + 2.0 * KinvSA)
    G_K = c * (2.0 * np.outer(Ae, beta) + A @ A.T - 2.0 * KinvSA @ A.T)
    G_K -= 0.5 * (-Kinv @ S @ Kinv - np.outer(beta, beta) + Kinv)
    G_d = c

    _, dKx_v, dKx_l = kernel_matrix_grads(model.kernel, Z, X)
    _, _, dKuu_l = kernel_matrix_grads(model.kernel, Z, Z)
    dKuu_v = model.Kuu
    dd_v = kernel_diag(model.kernel, X)
    g_theta = np.array(
        [
            np.sum(G_K * dKuu_v) + np.sum(G_Kx * dKx_v) + G_d * np.sum(dd_v),
            np.sum(G_K * dKuu_l) + np.sum(G_Kx * dKx_l),
        ]
    )
    return value, ElboGrad(float(g_log_s), g_theta, g_m, g_C)


def elbo_grad(model: SparseGPModel, batch: MiniBatch, scale: float = 1.0) -> ElboGrad:
    return elbo_and_grad(model, batch, scale)[1]


def predict(model: SparseGPModel, xstar):
    """Predictive mean and total variance (model uncertainty plus noise) of the next state.

    Scalar input gives scalar outputs; array input gives arrays.
    """
    scalar = np.ndim(xstar) == 0
    X = _as_inputs(xstar)
    Kx = kernel_matrix(model.kernel, model.inducing.Z, X)
    A = linalg.cho_solve((model.Kuu_chol, True), Kx)
    CtA = model.q.S_chol.T @ A
    mu = model.mean(X) + Kx.T @ model.beta
    kt = np.maximum(kernel_diag(model.kernel, X) - np.sum(Kx * A, axis=0), 0.0)
    var = kt + np.sum(CtA * CtA, axis=0) + model.noise_var
    if scalar:
        return float(mu[0]), float(var[0])
    return mu, var


def joint_predictive(model: SparseGPModel, X, include_noise: bool = True):
    """Joint predictive mean and covariance of the next state at all points of ``X``."""
    X = _as_inputs(X)
    Kx = kernel_matrix(model.kernel, model.inducing.Z, X)
    A = linalg.cho_solve((model.Kuu_chol, True), Kx)
    CtA = model.q.S_chol.T @ A
    mu = model.mean(X) + Kx.T @ model.beta
    cov = kernel_matrix(model.kernel, X, X) - Kx.T @ A + CtA.T @ CtA
    if include_noise:
        cov[np.diag_indices_from(cov)] += model.noise_var
    return mu, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class OptimizerState:
    """Robbins-Monro schedule ``rate(t) = base_rate / (1 + t / decay)``.

    Hyperparameters (noise and kernel) step with ``hyper_rate_mult * rate``.
    ``decay = inf`` gives a constant rate.
    """

    step_count: int = 0
    base_rate: float = 0.05
    decay: float = 1000.0
    hyper_rate_mult: float = 0.1

    def __post_init__(self):
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")
        if self.base_rate < 0 or self.decay <= 0 or self.hyper_rate_mult < 0:
            raise ValueError("invalid learning-rate schedule")

    @property
    def rate(self) -> float:
        return learning_rate(self, self.step_count)


def learning_rate(opt: OptimizerState, t: int) -> float:
    return opt.base_rate / (1.0 + t / opt.decay)


def sgd_step(model: SparseGPModel, grad: ElboGrad, opt: OptimizerState) -> tuple[SparseGPModel, OptimizerState]:
    """One ascent step on the bound; raises ``FloatingPointError`` on a non-finite update."""
    lr = opt.rate
    lr_h = lr * opt.hyper_rate_mult
    if not np.all(np.isfinite(grad.as_vector())):
        raise FloatingPointError("non-finite gradient")

    log_s = math.log(model.noise_var) + lr_h * grad.log_noise_var
    log_k = model.kernel.log_params + lr_h * grad.log_kernel
    m = model.q.m + lr * grad.m
    C = model.q.S_chol.copy()
    diag = np.diag_indices_from(C)
    log_diag = np.log(np.diag(C)) + lr * np.diag(grad.S_chol)
    C += lr * np.tril(grad.S_chol, -1)
    C[diag] = np.exp(log_diag)

    if not (np.isfinite(log_s) and np.all(np.isfinite(log_k)) and np.all(np.isfinite(m)) and np.all(np.isfinite(C))):
        raise FloatingPointError("non-finite parameter update")
    try:
        new_model = SparseGPModel(
            model.kernel.with_log_params(log_k),
            model.mean,
            math.exp(log_s),
            model.inducing,
            VariationalParams(m, C),
        )
    except (ValueError, OverflowError) as exc:
        # exp under/overflow of a log-parameter
        raise FloatingPointError(f"parameter update left the valid range: {exc}") from exc
    return new_model, replace(opt, step_count=opt.step_count + 1)


# ---------------------------------------------------------------------------
# flat parameter vectors (optimizers, finite differences)


def pack_params(model: SparseGPModel) -> np.ndarray:
    C = model.q.S_chol.copy()
    C[np.diag_indices_from(C)] = np.log(np.diag(C))
    return np.concatenate(
        [[math.log(model.noise_var)], model.kernel.log_params, model.q.m, C[np.tril_indices_from(C)]]
    )


def unpack_params(model: SparseGPModel, vec) -> SparseGPModel:
    vec = np.asarray(vec, dtype=float)
    L = model.L
    m = vec[3 : 3 + L]
    C = np.zeros((L, L))
    C[np.tril_indices(L)] = vec[3 + L :]
    C[np.diag_indices(L)] = np.exp(np.diag(C))
    return SparseGPModel(
        model.kernel.with_log_params(vec[1:3]),
        model.mean,
        float(math.exp(vec[0])),
        model.inducing,
        VariationalParams(m, C),
    )


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: SparseGPModel) -> dict:
    return {
        "kernel": {
            "signal_variance": model.kernel.signal_variance,
            "lengthscale": model.kernel.lengthscale,
            "smoothness": model.kernel.smoothness.value,
        },
        "mean": model.mean.kind.value,
        "noise_var": model.noise_var,
        "inducing": {"layout": model.inducing.layout, "Z": model.inducing.Z.tolist()},
        "q": {"m": model.q.m.tolist(), "S_chol": model.q.S_chol.tolist()},
    }


def model_from_dict(d: dict) -> SparseGPModel:
    k = d["kernel"]
    return SparseGPModel(
        KernelParams(float(k["signal_variance"]), float(k["lengthscale"]), Smoothness(k["smoothness"])),
        MeanFn(MeanKind(d["mean"])),
        float(d["noise_var"]),
        InducingSet(np.array(d["inducing"]["Z"], dtype=float), d["inducing"]["layout"]),
        VariationalParams(np.array(d["q"]["m"], dtype=float), np.array(d["q"]["S_chol"], dtype=float)),
    )


def optimizer_to_dict(opt: OptimizerState) -> dict:
    return {
        "step_count": opt.step_count,
        "base_rate": opt.base_rate,
        "decay": opt.decay,
        "hyper_rate_mult": opt.hyper_rate_mult,
    }


def optimizer_from_dict(d: dict) -> OptimizerState:
    return OptimizerState(int(d["step_count"]), float(d["base_rate"]), float(d["decay"]), float(d["hyper_rate_mult"]))


def save_model(path, model: SparseGPModel, opt: OptimizerState | None = None) -> None:
    doc = {"model": model_to_dict(model), "optimizer": optimizer_to_dict(opt or OptimizerState())}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path) -> tuple[SparseGPModel, OptimizerState]:
    doc = json.loads(Path(path).read_text())
    return model_from_dict(doc["model"]), optimizer_from_dict(doc["optimizer"])
