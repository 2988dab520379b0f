"""Effective sample size and resampling schemes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Ensemble, Purpose, RngStream, normalize_log_weights, uniform_draw

__all__ = [
    "ResamplingConfig",
    "WINDOW_END",
    "effective_sample_size",
    "maybe_resample",
    "resample",
    "resample_indices",
]

SCHEMES = ("multinomial", "systematic")

# k-slot of resampling streams used at the end of an assimilation window
WINDOW_END = 0xFFFFFFFF


@dataclass(frozen=True)
class ResamplingConfig:
    scheme: str = "systematic"
    threshold_fraction: float = 0.75

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown resampling scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise ValueError("threshold_fraction must lie in (0, 1]")


def effective_sample_size(normalized_weights) -> float:
    """``1 / sum(w_i^2)`` for weights that already sum to one."""
    w = np.asarray(normalized_weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights are not normalized (sum={w.sum()!r})")
    return float(1.0 / np.sum(w * w))


def resample_indices(weights, scheme: str, rng: RngStream) -> np.ndarray:
    """Ancestor indices drawn according to ``weights``.

    ``rng`` supplies the uniforms: multinomial uses one per output slot
    (particles ``0..N-1`` of the stream), systematic a single shared offset.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.size
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    if scheme == "multinomial":
        u = uniform_draw(RngStream(rng.seed, np.arange(n), rng.t, rng.k, rng.purpose))[:, 0]
    elif scheme == "systematic":
        u0 = uniform_draw(RngStream(rng.seed, 0, rng.t, rng.k, rng.purpose))[0]
        u = (np.arange(n) + u0) / n
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return np.minimum(np.searchsorted(cdf, u, side="left"), n - 1)


def resample(ensemble: Ensemble, scheme: str, rng: RngStream) -> Ensemble:
    idx = resample_indices(ensemble.normalized_weights(), scheme, rng)
    return Ensemble(ensemble.particles[idx])


def maybe_resample(ensemble: Ensemble, config: ResamplingConfig, rng: RngStream):
    """Resample iff ESS < threshold_fraction * N.

    Returns ``(ensemble, did_resample, ess)`` with the ESS measured before any
    resampling.
    """
    w, _ = normalize_log_weights(ensemble.log_weights)
    ess = effective_sample_size(w)
    if ess < config.threshold_fraction * ensemble.n_particles:
        return resample(ensemble, config.scheme, rng), True, ess
    return ensemble, False, ess


def resampling_stream(seed: int, t: int, k: int) -> RngStream:
    return RngStream(seed, 0, t, k, Purpose.RESAMPLE)
