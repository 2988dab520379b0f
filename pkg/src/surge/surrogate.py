"""Conditional diffusion transitions over internal time s in [0, 1].

A transition surrogate realizes ``p(x_{t+1} | x_t)`` as the SDE

    dx_s = v(x_s, s | x_t) ds + Sigma(s)^{1/2} dW_s,    x_0 = x_t.

``GaussianBridgeSurrogate`` uses the constant drift ``m(x_t) - x_t`` and the
constant covariance ``Q`` so that the endpoint law is exactly ``N(m(x_t), Q)``
(and stays exact under Euler-Maruyama for any step count). A learned drift can
be plugged in through ``TransitionSurrogate`` directly.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ConstantSchedule",
    "GaussianBridgeSurrogate",
    "LorenzParams",
    "TransitionSurrogate",
    "VarianceSchedule",
    "lorenz_drift",
    "make_linear_gaussian_surrogate",
    "make_lorenz_surrogate",
    "psd_sqrt",
    "rk4_map",
]


def psd_sqrt(cov, *, tol: float = 1e-10) -> np.ndarray:
    """Symmetric square root of a PSD matrix; raises on negative eigenvalues."""
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
        raise ValueError("covariance must be symmetric")
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min() < -tol * scale:
        raise ValueError(f"covariance is not PSD (min eigenvalue {vals.min():.3e})")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


class VarianceSchedule:
    """Diffusion covariance ``Sigma(s)`` and its symmetric square root."""

    def cov(self, s: float) -> np.ndarray:
        raise NotImplementedError

    def sqrt(self, s: float) -> np.ndarray:
        return psd_sqrt(self.cov(s))


class ConstantSchedule(VarianceSchedule):
    def __init__(self, cov):
        self._cov = np.atleast_2d(np.asarray(cov, dtype=np.float64)).copy()
        self._sqrt = psd_sqrt(self._cov)
        self._cov.flags.writeable = False
        self._sqrt.flags.writeable = False

    def cov(self, s: float) -> np.ndarray:
        return self._cov

    def sqrt(self, s: float) -> np.ndarray:
        return self._sqrt

    @property
    def dim(self) -> int:
        return self._cov.shape[0]


@dataclass(frozen=True)
class TransitionSurrogate:
    """Drift ``v(x, s | x_cond)`` plus variance schedule.

    ``drift`` is vectorized: it takes ``x`` and ``x_cond`` of shape (N, D) and
    returns (N, D).
    """

    drift: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    schedule: VarianceSchedule
    dim: int


_CACHE_LOCK = threading.Lock()
_CACHE_SIZE = 256


class GaussianBridgeSurrogate(TransitionSurrogate):
    """Constant-drift bridge with exact endpoint law ``N(mean_map(x_t), Q)``."""

    def __init__(self, mean_map: Callable[[np.ndarray], np.ndarray], endpoint_cov):
        schedule = ConstantSchedule(endpoint_cov)
        object.__setattr__(self, "mean_map", mean_map)
        object.__setattr__(self, "endpoint_cov", schedule.cov(0.0))
        super().__init__(drift=self._bridge_drift, schedule=schedule, dim=schedule.dim)

    def _bridge_drift(self, x, s, x_cond):
        x_cond = np.asarray(x_cond, dtype=np.float64)
        return np.broadcast_to(self._velocity(x_cond), np.shape(x)).copy()

    def _velocity(self, x_cond: np.ndarray) -> np.ndarray:
        # the drift is constant over a window, so memoize the (pure) mean map
        key = (x_cond.shape, x_cond.tobytes())
        cache = self.__dict__.setdefault("_cache", OrderedDict())
        with _CACHE_LOCK:
            hit = cache.get(key)
        if hit is not None:
            return hit
        v = self.mean_map(x_cond) - x_cond
        v.flags.writeable = False
        with _CACHE_LOCK:
            cache[key] = v
            while len(cache) > _CACHE_SIZE:
                cache.popitem(last=False)
        return v


def make_linear_gaussian_surrogate(A, Q) -> GaussianBridgeSurrogate:
    """Bridge whose transition is ``x_{t+1} ~ N(A x_t, Q)``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if not np.all(np.isfinite(A)):
        raise ValueError("A must be finite")
    if A.shape[0] != A.shape[1] or A.shape != Q.shape:
        raise ValueError(f"A {A.shape} and Q {Q.shape} must be square and of equal size")
    psd_sqrt(Q)  # validates PSD
    surrogate = GaussianBridgeSurrogate(lambda x: x @ A.T, Q)
    object.__setattr__(surrogate, "A", A)
    return surrogate


# --- Lorenz-63 ---------------------------------------------------------------


@dataclass(frozen=True)
class LorenzParams:
    """Stochastic Lorenz-63 settings.

    ``h`` is the time between observations; each transition integrates it with
    ``substeps`` RK4 steps before adding ``N(0, noise_std^2 I)`` forcing.
    """

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    h: float = 0.05
    noise_std: float = 0.05
    substeps: int = 10

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    def fixed_point(self) -> np.ndarray:
        c = np.sqrt(self.beta * (self.rho - 1.0))
        return np.array([c, c, self.rho - 1.0])


def lorenz_drift(x: np.ndarray, params: LorenzParams) -> np.ndarray:
    a, b, c = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [
            params.sigma * (b - a),
            a * (params.rho - c) - b,
            a * b - params.beta * c,
        ],
        axis=-1,
    )


def rk4_map(x, params: LorenzParams, h: float | None = None, substeps: int | None = None) -> np.ndarray:
    """Deterministic RK4 flow of the Lorenz drift over time ``h``."""
    h = params.h if h is None else h
    substeps = params.substeps if substeps is None else substeps
    dt = h / substeps
    x = np.asarray(x, dtype=np.float64)
    for _ in range(substeps):
        k1 = lorenz_drift(x, params)
        k2 = lorenz_drift(x + 0.5 * dt * k1, params)
        k3 = lorenz_drift(x + 0.5 * dt * k2, params)
        k4 = lorenz_drift(x + dt * k3, params)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def make_lorenz_surrogate(
    params: LorenzParams | None = None,
    h: float | None = None,
    noise_std: float | None = None,
) -> GaussianBridgeSurrogate:
    """Bridge from the RK4 map of Lorenz-63 with isotropic endpoint noise."""
    params = params or LorenzParams()
    h = params.h if h is None else h
    noise_std = params.noise_std if noise_std is None else noise_std
    if not h > 0:
        raise ValueError("h must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    surrogate = GaussianBridgeSurrogate(
        lambda x: rk4_map(x, params, h=h), noise_std**2 * np.eye(3)
    )
    object.__setattr__(surrogate, "params", params)
    return surrogate
