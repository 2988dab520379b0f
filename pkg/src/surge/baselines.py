"""Reference filters: exact Kalman, bootstrap particle filter, stochastic EnKF."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Ensemble, Purpose, RngStream, gaussian_draw
from .filter import EssTrace, FilterOutput, as_observation_matrix
from .guidance import zero_guidance
from .observation import ObservationModel
from .propagation import propagate_window, uniform_grid
from .resampling import WINDOW_END, ResamplingConfig, resample_indices, resampling_stream
from .surrogate import TransitionSurrogate
from .weights import WeightLedger

__all__ = [
    "KalmanState",
    "bootstrap_pf",
    "bridge_sampler",
    "enkf",
    "kalman_filter",
]

TransitionSampler = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class KalmanState:
    """Gaussian posterior ``N(mean, cov)``; ``log_marginal`` is ``log p(y_t | y_{1:t-1})``."""

    mean: np.ndarray
    cov: np.ndarray
    log_marginal: float = float("nan")


def _symmetrize_psd(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    vals, vecs = np.linalg.eigh(P)
    if vals.min() < -1e-10:
        raise ValueError(f"covariance lost positive semi-definiteness (min eigenvalue {vals.min():.3e})")
    if vals.min() < 0:
        P = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return P


def kalman_filter(A, Q, H, R_cov, observations, init: KalmanState) -> list[KalmanState]:
    """Predict/update recursion; returns the posteriors for ``t = 1..T``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    R_cov = np.atleast_2d(np.asarray(R_cov, dtype=np.float64))
    ys = as_observation_matrix(observations, H.shape[0])
    m = np.asarray(init.mean, dtype=np.float64).reshape(-1)
    P = np.atleast_2d(np.asarray(init.cov, dtype=np.float64))
    if A.shape != (m.size, m.size) or Q.shape != A.shape or H.shape[1] != m.size:
        raise ValueError("inconsistent dimensions")
    out = []
    for y in ys:
        m = A @ m
        P = A @ P @ A.T + Q
        S = H @ P @ H.T + R_cov
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ValueError("singular innovation covariance") from None
        resid = y - H @ m
        gain = np.linalg.solve(S, H @ P).T
        m = m + gain @ resid
        P = _symmetrize_psd(P - gain @ S @ gain.T)
        z = np.linalg.solve(L, resid)
        log_marginal = -0.5 * (z @ z) - np.sum(np.log(np.diag(L))) - 0.5 * y.size * np.log(2 * np.pi)
        out.append(KalmanState(m.copy(), P.copy(), float(log_marginal)))
    return out


def bridge_sampler(
    surrogate: TransitionSurrogate, n_steps: int, seed: int, *, workers: int = 1
) -> TransitionSampler:
    """Endpoint sampler that simulates the unguided ``n_steps`` bridge.

    It draws from the same streams as ``surge_filter`` with the same seed and
    step count, so both produce identical paths under zero guidance.
    """
    grid = uniform_grid(n_steps)
    guidance = zero_guidance()

    def sample(x, t):
        pool = ThreadPoolExecutor(workers) if workers > 1 else nullcontext()
        with pool as executor:
            path = propagate_window(surrogate, guidance, x, x, None, grid, seed=seed, t=t, executor=executor)
        return path[-1].x_after

    return sample


def _init(init_ensemble) -> Ensemble:
    return init_ensemble if isinstance(init_ensemble, Ensemble) else Ensemble(init_ensemble)


def bootstrap_pf(
    transition_sampler: TransitionSampler,
    obs_model: ObservationModel,
    observations,
    init_ensemble,
    resampling: ResamplingConfig | None = None,
    *,
    seed: int,
) -> FilterOutput:
    """Propagate with the transition kernel, weight by the likelihood, resample.

    Resampling is ESS-triggered per ``resampling`` (threshold 1.0 resamples at
    every step) and uses the same streams as the end-of-window decision in
    ``surge_filter``.
    """
    resampling = resampling or ResamplingConfig()
    ys = as_observation_matrix(observations, obs_model.dim_obs)
    ens0 = _init(init_ensemble)
    n = ens0.n_particles
    x = ens0.particles.copy()
    ledger = WeightLedger(ens0.log_weights)
    trace = EssTrace()
    ensembles = []
    log_evidence = np.zeros(ys.shape[0])
    for t, y in enumerate(ys):
        x = transition_sampler(x, t)
        log_evidence[t] = ledger.update(np.atleast_1d(obs_model.log_likelihood(y, x)), t=t)
        ensembles.append(Ensemble(x, ledger.log_w.copy()))
        ess = ledger.ess()
        do_resample = ess < resampling.threshold_fraction * n
        if do_resample:
            idx = resample_indices(ledger.weights(), resampling.scheme, resampling_stream(seed, t, WINDOW_END))
            x = x[idx]
            ledger.reset_uniform()
        trace.append(t, 0, ess, do_resample)
    return FilterOutput(ensembles, trace, log_evidence, n, method="bpf")


def enkf(
    transition_sampler: TransitionSampler,
    obs_model: ObservationModel,
    observations,
    init_ensemble,
    *,
    seed: int,
) -> FilterOutput:
    """Stochastic (perturbed-observation) ensemble Kalman filter.

    Nonlinear operators are linearized at the forecast mean for the gain; the
    innovations use the full operator.
    """
    ys = as_observation_matrix(observations, obs_model.dim_obs)
    ens0 = _init(init_ensemble)
    n = ens0.n_particles
    if n < 2:
        raise ValueError("EnKF needs at least 2 ensemble members")
    R_cov = obs_model.noise_cov
    x = ens0.particles.copy()
    ensembles = []
    trace = EssTrace()
    for t, y in enumerate(ys):
        x = transition_sampler(x, t)
        mean = x.mean(axis=0)
        anomalies = x - mean
        P = anomalies.T @ anomalies / (n - 1)
        H = obs_model.jacobian(mean[None, :])[0]
        S = H @ P @ H.T + R_cov
        gain = np.linalg.solve(S, H @ P).T
        eps = gaussian_draw(RngStream(seed, np.arange(n), t, 0, Purpose.ENKF), obs_model.dim_obs)
        perturbed = y + eps * obs_model.noise_std
        x = x + (perturbed - obs_model.operator(x)) @ gain.T
        ensembles.append(Ensemble(x))
        trace.append(t, 0, float(n), False)
    return FilterOutput(ensembles, trace, np.full(ys.shape[0], np.nan), n, method="enkf")
