"""Matérn kernels and an exact (dense) Gaussian-process regression oracle.

States may be scalars or vectors. Inputs are accepted as 1-D arrays
(``n`` scalar states) or 2-D arrays of shape ``(n, d)``; distances are
Euclidean with a single isotropic lengthscale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

LOG_2PI = np.log(2.0 * np.pi)
JITTER = 1e-8


class ConditioningError(np.linalg.LinAlgError):
    """A covariance system could not be factorized even after adding jitter."""


class Smoothness(str, enum.Enum):
    HALF = "half"
    THREE_HALVES = "three_halves"
    FIVE_HALVES = "five_halves"


class MeanKind(str, enum.Enum):
    ZERO = "zero"
    IDENTITY = "identity"


@dataclass(frozen=True)
class KernelParams:
    """Matérn kernel hyperparameters.

    ``k(x, x') = signal_variance * phi(|x - x'| / lengthscale)`` where
    ``phi`` is the Matérn correlation of the chosen smoothness order.
    """

    signal_variance: float = 1.0
    lengthscale: float = 1.0
    smoothness: Smoothness = Smoothness.FIVE_HALVES

    def __post_init__(self):
        object.__setattr__(self, "smoothness", Smoothness(self.smoothness))
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")

    @property
    def log_params(self) -> np.ndarray:
        return np.log([self.signal_variance, self.lengthscale])

    def with_log_params(self, log_params) -> "KernelParams":
        v, ls = np.exp(np.asarray(log_params, dtype=float))
        return KernelParams(float(v), float(ls), self.smoothness)


@dataclass(frozen=True)
class MeanFn:
    """Prior mean of the GP: zero, or identity (``f(x) = x``, scalar states only)."""

    kind: MeanKind = MeanKind.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "kind", MeanKind(self.kind))

    def __call__(self, X) -> np.ndarray:
        X = _as_inputs(X)
        if self.kind is MeanKind.ZERO:
            return np.zeros(X.shape[0])
        if X.shape[1] != 1:
            raise ValueError("identity mean is only defined for scalar states")
        return X[:, 0].copy()


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        X = _as_inputs(self.inputs)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.targets.shape[0]


def _as_inputs(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    elif X.ndim != 2:
        raise ValueError(f"inputs must be 1-D or 2-D, got shape {X.shape}")
    return X


def _scaled_distance(p: KernelParams, A, B) -> np.ndarray:
    A, B = _as_inputs(A), _as_inputs(B)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("kernel inputs must be finite")
    if A.shape[1] == 1:
        r = np.abs(A[:, 0][:, None] - B[:, 0][None, :])
    else:
        diff = A[:, None, :] - B[None, :, :]
        r = np.sqrt(np.sum(diff * diff, axis=-1))
    return r / p.lengthscale


def _matern(order: Smoothness, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Correlation ``phi(rho)`` and ``-rho * phi'(rho)`` (derivative w.r.t. log lengthscale)."""
    if order is Smoothness.HALF:
        e = np.exp(-rho)
        return e, rho * e
    if order is Smoothness.THREE_HALVES:
        s = np.sqrt(3.0) * rho
        e = np.exp(-s)
        return (1.0 + s) * e, s * s * e
    s = np.sqrt(5.0) * rho
    e = np.exp(-s)
    return (1.0 + s + s * s / 3.0) * e, (s * s / 3.0) * (1.0 + s) * e


def kernel_matrix(p: KernelParams, A, B) -> np.ndarray:
    """Covariance matrix with entries ``k(A_i, B_j)``."""
    phi, _ = _matern(p.smoothness, _scaled_distance(p, A, B))
    return p.signal_variance * phi


def kernel_matrix_grads(p: KernelParams, A, B) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel matrix and its derivatives w.r.t. log signal variance and log lengthscale."""
    phi, dphi = _matern(p.smoothness, _scaled_distance(p, A, B))
    K = p.signal_variance * phi
    return K, K.copy(), p.signal_variance * dphi


def kernel_diag(p: KernelParams, A) -> np.ndarray:
    return np.full(_as_inputs(A).shape[0], p.signal_variance)


def kernel_eval(p: KernelParams, x, x2) -> float:
    return float(kernel_matrix(p, np.atleast_1d(x)[None, ...], np.atleast_1d(x2)[None, ...])[0, 0])


def kernel_grad(p: KernelParams, x, x2, log_space: bool = True) -> np.ndarray:
    """Gradient of ``k(x, x')`` over ``(signal_variance, lengthscale)``.

    With ``log_space=True`` (the parameterization the optimizer steps in) the
    derivatives are w.r.t. the logs of the hyperparameters.
    """
    a = np.atleast_1d(x)[None, ...]
    b = np.atleast_1d(x2)[None, ...]
    _, dv, dl = kernel_matrix_grads(p, a, b)
    g = np.array([dv[0, 0], dl[0, 0]])
    if not log_space:
        g /= np.array([p.signal_variance, p.lengthscale])
    return g


def safe_cholesky(A: np.ndarray, jitter_scale: float = 1.0, max_tries: int = 6) -> np.ndarray:
    """Lower Cholesky factor; adds escalating diagonal jitter if ``A`` is not numerically PD."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ConditioningError("matrix contains non-finite entries")
    try:
        return linalg.cholesky(A, lower=True)
    except linalg.LinAlgError:
        pass
    jitter = JITTER * jitter_scale
    eye = np.eye(A.shape[0])
    for _ in range(max_tries):
        try:
            return linalg.cholesky(A + jitter * eye, lower=True)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise ConditioningError(
        f"matrix of size {A.shape[0]} not positive definite after jitter {jitter / 10:.1e}"
    )


def gp_posterior(d: Dataset, p: KernelParams, mean: MeanFn, noise_var: float, Xstar):
    """Posterior mean vector and covariance of ``f(Xstar)`` given noisy data.

    Returns ``(mu, cov)`` with ``mu = mean(X*) + K_MN (K_NN + s I)^-1 (y - mean(X))``
    and ``cov = K_MM - K_MN (K_NN + s I)^-1 K_NM``, ``s`` the noise variance.
    """
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    Xs = _as_inputs(Xstar)
    Kss = kernel_matrix(p, Xs, Xs)
    mu = mean(Xs)
    if len(d) == 0:
        return mu, Kss
    Kxx = kernel_matrix(p, d.inputs, d.inputs) + noise_var * np.eye(len(d))
    L = safe_cholesky(Kxx, p.signal_variance)
    Kxs = kernel_matrix(p, d.inputs, Xs)
    alpha = linalg.cho_solve((L, True), d.targets - mean(d.inputs))
    V = linalg.solve_triangular(L, Kxs, lower=True)
    cov = Kss - V.T @ V
    return mu + Kxs.T @ alpha, 0.5 * (cov + cov.T)


def gp_log_marginal(d: Dataset, p: KernelParams, mean: MeanFn, noise_var: float) -> float:
    """``log N(y; mean(X), K_NN + noise_var I)``; zero for an empty dataset."""
    n = len(d)
    if n == 0:
        return 0.0
    Kxx = kernel_matrix(p, d.inputs, d.inputs) + noise_var * np.eye(n)
    L = safe_cholesky(Kxx, p.signal_variance)
    r = linalg.solve_triangular(L, d.targets - mean(d.inputs), lower=True)
    return float(-0.5 * (r @ r) - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)
