"""Observation operators with diagonal Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ObservationModel",
    "grad_log_likelihood",
    "log_likelihood",
    "make_arctan_partial_model",
    "make_linear_model",
]


@dataclass(frozen=True)
class ObservationModel:
    """``y = operator(x) + eps``, ``eps ~ N(0, diag(noise_std**2))``.

    ``operator`` maps (N, D) -> (N, M); ``jacobian`` maps (N, D) -> (N, M, D).
    """

    operator: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    noise_std: np.ndarray
    dim_obs: int
    name: str = "custom"

    def __post_init__(self):
        std = np.broadcast_to(np.asarray(self.noise_std, dtype=np.float64), (self.dim_obs,)).copy()
        if np.any(std <= 0):
            raise ValueError("observation noise std must be positive")
        std.flags.writeable = False
        object.__setattr__(self, "noise_std", std)

    @property
    def noise_cov(self) -> np.ndarray:
        return np.diag(self.noise_std**2)

    def _residual(self, y, x):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != self.dim_obs:
            raise ValueError(f"observation has length {y.shape[0]}, model expects {self.dim_obs}")
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        pred = self.operator(xs)
        if pred.shape[-1] != self.dim_obs:
            raise ValueError("operator output does not match dim_obs")
        return y - pred, xs, single

    def log_likelihood(self, y, x):
        r, _, single = self._residual(y, x)
        z = r / self.noise_std
        ll = -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.noise_std * np.sqrt(2.0 * np.pi)))
        return float(ll[0]) if single else ll

    def grad_log_likelihood(self, y, x):
        r, xs, single = self._residual(y, x)
        J = self.jacobian(xs)
        g = np.einsum("nmd,nm->nd", J, r / self.noise_std**2)
        return g[0] if single else g


def log_likelihood(model: ObservationModel, y, x):
    """Gaussian log-density ``log p(y | x)``; vectorized over a leading axis of ``x``."""
    return model.log_likelihood(y, x)


def grad_log_likelihood(model: ObservationModel, y, x):
    """``J_A(x)^T diag(noise_std^-2) (y - A(x))``."""
    return model.grad_log_likelihood(y, x)


def make_linear_model(H, noise_std) -> ObservationModel:
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    m, d = H.shape

    def jac(x):
        return np.broadcast_to(H, (x.shape[0], m, d))

    model = ObservationModel(lambda x: x @ H.T, jac, noise_std, m, name="linear")
    object.__setattr__(model, "H", H)
    return model


def make_arctan_partial_model(gamma: float = 0.05) -> ObservationModel:
    """Observe ``arctan`` of the first coordinate only."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")

    def op(x):
        return np.arctan(x[:, :1])

    def jac(x):
        J = np.zeros((x.shape[0], 1, x.shape[1]))
        J[:, 0, 0] = 1.0 / (1.0 + x[:, 0] ** 2)
        return J

    return ObservationModel(op, jac, gamma, 1, name="arctan")
