"""Evaluation metrics: RMSE, 1-D Wasserstein-1 and ESS summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .filter import EssTrace, FilterOutput

__all__ = [
    "MetricReport",
    "ess_stats",
    "metric_report",
    "rmse",
    "wasserstein1_1d",
]


def rmse(estimates, truth) -> float:
    """``sqrt(1/(T D) sum_t |xhat_t - x_t|^2)``."""
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.ndim == 1:
        est = est[:, None]
    if tru.ndim == 1:
        tru = tru[:, None]
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: estimates {est.shape} vs truth {tru.shape}")
    return float(np.sqrt(np.mean((est - tru) ** 2)))


def wasserstein1_1d(samples_a, samples_b, weights_a=None, weights_b=None) -> float:
    """Wasserstein-1 distance between two 1-D empirical distributions.

    Equal-size unweighted samples reduce to the mean absolute difference of the
    sorted samples; otherwise the quantile functions are integrated exactly.
    """
    a = np.asarray(samples_a, dtype=np.float64).reshape(-1)
    b = np.asarray(samples_b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    if weights_a is None and weights_b is None and a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(wasserstein_distance(a, b, weights_a, weights_b))


def ess_stats(trace: EssTrace, n_particles: int) -> tuple[float, float]:
    """Mean and minimum of ESS/N over every recorded (t, k)."""
    if len(trace) == 0:
        raise ValueError("empty ESS trace")
    frac = np.asarray(trace.ess) / n_particles
    return float(frac.mean()), float(frac.min())


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    w1: float
    ess_mean: float
    ess_min: float
    rmse_series: np.ndarray
    w1_series: np.ndarray


def metric_report(output: FilterOutput, truth) -> MetricReport:
    """Compare a filter run with the true states ``x_1..x_T`` (shape (T, D)).

    ``w1`` is the distance between each weighted posterior marginal and the
    point mass at the true coordinate, averaged over coordinates and time.
    """
    truth = np.asarray(truth, dtype=np.float64)
    means = output.means
    per_t_rmse = np.sqrt(np.mean((means - truth) ** 2, axis=1))
    per_t_w1 = np.empty(output.T)
    for t, ens in enumerate(output.ensembles):
        w = ens.normalized_weights()
        per_t_w1[t] = np.mean([
            wasserstein1_1d(ens.particles[:, d], truth[t, d : d + 1], w, None)
            for d in range(ens.dim)
        ])
    ess_mean, ess_min = ess_stats(output.ess_trace, output.n_particles) if len(output.ess_trace) else (1.0, 1.0)
    return MetricReport(
        rmse=rmse(means, truth),
        w1=float(per_t_w1.mean()),
        ess_mean=ess_mean,
        ess_min=ess_min,
        rmse_series=per_t_rmse,
        w1_series=per_t_w1,
    )
