"""Guidance potentials whose gradient is injected into the surrogate drift.

A potential only needs ``grad_G(x, s, y, x_cond)``; the importance weights
correct for whatever proposal it induces, so approximate guidance changes the
weight variance but never the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .observation import ObservationModel
from .surrogate import TransitionSurrogate

__all__ = [
    "GuidancePotential",
    "exact_doob_guidance",
    "likelihood_gradient_guidance",
    "zero_guidance",
]


@dataclass(frozen=True)
class GuidancePotential:
    """``grad_G`` maps ``(x (N, D), s, y, x_cond (N, D))`` to (N, D)."""

    grad_G: Callable[..., np.ndarray]
    label: str
    is_zero: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    def __call__(self, x, s, y, x_cond=None):
        return self.grad_G(x, s, y, x_cond)


def zero_guidance() -> GuidancePotential:
    def grad(x, s, y, x_cond=None):
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    return GuidancePotential(grad, "zero", is_zero=True)


def likelihood_gradient_guidance(
    model: ObservationModel, surrogate: TransitionSurrogate, lam: float
) -> GuidancePotential:
    """``lam * grad log p(y | x_hat)`` at the remaining-drift endpoint prediction.

    ``x_hat = x + v(x, s | x_cond) (1 - s)``. The Jacobian of the predictor is
    taken as the identity, which is exact for constant-drift bridges.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0:
        return zero_guidance()

    def grad(x, s, y, x_cond=None):
        x = np.asarray(x, dtype=np.float64)
        cond = x if x_cond is None else x_cond
        x_hat = x + surrogate.drift(x, s, cond) * (1.0 - s)
        return lam * model.grad_log_likelihood(y, x_hat)

    return GuidancePotential(grad, f"likelihood(lambda={lam:g})", extras={"lambda": lam})


def exact_doob_guidance(A, Q, H, R_cov) -> GuidancePotential:
    """Doob h-transform for a linear-Gaussian bridge with linear observation.

    Under the bridge, ``X_1 | X_s = x ~ N(x + v (1 - s), Q (1 - s))`` with
    ``v = A x_cond - x_cond``, so ``h(x, s) = N(y; H(x + v(1 - s)), H Q (1-s) H^T + R)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    R_cov = np.atleast_2d(np.asarray(R_cov, dtype=np.float64))

    def _innovation(x, s, y, x_cond):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cond = x if x_cond is None else np.atleast_2d(x_cond)
        v = cond @ A.T - cond
        S = (1.0 - s) * H @ Q @ H.T + R_cov
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ValueError(f"singular innovation covariance at s={s}") from None
        resid = np.asarray(y, dtype=np.float64).reshape(1, -1) - (x + v * (1.0 - s)) @ H.T
        return S, resid

    def grad(x, s, y, x_cond=None):
        S, resid = _innovation(x, s, y, x_cond)
        return np.linalg.solve(S, resid.T).T @ H

    def log_h(x, s, y, x_cond=None):
        S, resid = _innovation(x, s, y, x_cond)
        m = S.shape[0]
        quad = np.einsum("nm,nm->n", resid, np.linalg.solve(S, resid.T).T)
        _, logdet = np.linalg.slogdet(S)
        return -0.5 * (quad + logdet + m * np.log(2.0 * np.pi))

    return GuidancePotential(grad, "doob", extras={"log_h": log_h})
