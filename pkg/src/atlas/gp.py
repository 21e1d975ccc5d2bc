"""Exact Gaussian-process regression with a Matern nu=2.5 kernel.

Hyperparameters are fixed rather than optimized: the online residual model
stays deterministic and the data sets are small (hundreds of points at
most), so an O(n^3) Cholesky fit is fine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .errors import NumericalError

DEFAULT_LENGTHSCALE = 0.3
DEFAULT_SIGNAL_VAR = 1.0
DEFAULT_NOISE_VAR = 1e-3
MAX_JITTER = 1e-4


def matern52(r: np.ndarray, lengthscale: float, signal_var: float) -> np.ndarray:
    """Matern kernel with nu = 2.5 as a function of Euclidean distance."""
    z = np.sqrt(5.0) * np.asarray(r, dtype=float) / lengthscale
    return signal_var * (1.0 + z + z * z / 3.0) * np.exp(-z)


@dataclass
class GpModel:
    X: np.ndarray
    y_raw: np.ndarray
    y_mean: float
    y_std: float
    lengthscale: float
    signal_var: float
    noise_var: float
    chol: np.ndarray | None
    alpha: np.ndarray | None

    @property
    def n(self) -> int:
        return 0 if self.X is None else len(self.X)


def empty_gp(
    dim: int,
    lengthscale: float = DEFAULT_LENGTHSCALE,
    signal_var: float = DEFAULT_SIGNAL_VAR,
    noise_var: float = DEFAULT_NOISE_VAR,
) -> GpModel:
    """A prior-only model: mean 0, std = signal std everywhere."""
    return GpModel(
        X=np.zeros((0, dim)),
        y_raw=np.zeros(0),
        y_mean=0.0,
        y_std=1.0,
        lengthscale=lengthscale,
        signal_var=signal_var,
        noise_var=noise_var,
        chol=None,
        alpha=None,
    )


def gp_fit(
    X,
    y,
    lengthscale: float = DEFAULT_LENGTHSCALE,
    signal_var: float = DEFAULT_SIGNAL_VAR,
    noise_var: float = DEFAULT_NOISE_VAR,
) -> GpModel:
    """Fit an exact GP to pre-normalized inputs in [0, 1]^d."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) == 0:
        raise NumericalError("gp_fit requires at least one training point")
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if y_std < 1e-12:
        y_std = 1.0
    y_norm = (y - y_mean) / y_std

    K = matern52(cdist(X, X), lengthscale, signal_var)
    K[np.diag_indices_from(K)] += noise_var
    jitter = 0.0
    while True:
        try:
            L = cholesky(K + jitter * np.eye(len(K)), lower=True)
            break
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER:
                raise NumericalError(
                    f"kernel matrix not positive definite at jitter {MAX_JITTER}"
                )
    alpha = cho_solve((L, True), y_norm)
    return GpModel(
        X=X, y_raw=y, y_mean=y_mean, y_std=y_std,
        lengthscale=lengthscale, signal_var=signal_var, noise_var=noise_var,
        chol=L, alpha=alpha,
    )


def gp_predict(model: GpModel, x_star) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and std at test inputs, denormalized."""
    Xs = np.atleast_2d(np.asarray(x_star, dtype=float))
    if model.n == 0:
        mean = np.zeros(len(Xs))
        std = np.full(len(Xs), np.sqrt(model.signal_var))
        return mean * model.y_std + model.y_mean, std * model.y_std
    k_star = matern52(cdist(Xs, model.X), model.lengthscale, model.signal_var)
    mean = k_star @ model.alpha
    v = solve_triangular(model.chol, k_star.T, lower=True)
    var = model.signal_var - np.sum(v * v, axis=0)
    var = np.maximum(var, 0.0)
    return mean * model.y_std + model.y_mean, np.sqrt(var) * model.y_std


def save_gp(model: GpModel, path) -> None:
    payload = {
        "X": model.X.tolist(),
        "y": model.y_raw.tolist(),
        "lengthscale": model.lengthscale,
        "signal_var": model.signal_var,
        "noise_var": model.noise_var,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_gp(path, dim: int | None = None) -> GpModel:
    """Reload a checkpoint; the posterior factors are refit from the data."""
    with open(path) as fh:
        payload = json.load(fh)
    X = np.array(payload["X"], dtype=float)
    if len(X) == 0:
        return empty_gp(dim or 1, payload["lengthscale"], payload["signal_var"],
                        payload["noise_var"])
    return gp_fit(X, np.array(payload["y"]), payload["lengthscale"],
                  payload["signal_var"], payload["noise_var"])
