"""The SURGE assimilation loop.

Each observation window simulates the guided SDE over ``K`` internal steps,
accumulates Girsanov-corrected, telescoped-likelihood weights and resamples
whenever the effective sample size drops below the configured fraction of N.
In ``whole_step`` mode the weight is computed once per window from the full
path instead.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Ensemble
from .guidance import GuidancePotential, zero_guidance
from .observation import ObservationModel
from .propagation import chunked_em_step, uniform_grid
from .resampling import WINDOW_END, ResamplingConfig, resample_indices, resampling_stream
from .surrogate import TransitionSurrogate
from .weights import WeightLedger, incremental_log_weight_parts, linear_schedule, whole_step_log_weight

__all__ = [
    "EssTrace",
    "FilterConfig",
    "FilterOutput",
    "WeightTrace",
    "posterior_estimate",
    "surge_filter",
]

MODES = ("incremental", "whole_step")


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int
    n_steps: int
    seed: int
    resampling: ResamplingConfig = field(default_factory=ResamplingConfig)
    guidance: GuidancePotential = field(default_factory=zero_guidance)
    mode: str = "incremental"
    resample_every_k: bool = True
    reweight: bool = True
    record_weights: bool = False
    workers: int = 1
    alpha: Callable[[float], float] = linear_schedule

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class EssTrace:
    t: list[int] = field(default_factory=list)
    k: list[int] = field(default_factory=list)
    ess: list[float] = field(default_factory=list)
    resampled: list[bool] = field(default_factory=list)

    def append(self, t, k, ess, resampled):
        self.t.append(t)
        self.k.append(k)
        self.ess.append(float(ess))
        self.resampled.append(bool(resampled))

    def __len__(self):
        return len(self.ess)

    def rows(self):
        return zip(self.t, self.k, self.ess, self.resampled)


@dataclass
class WeightTrace:
    rows: list[tuple] = field(default_factory=list)

    def extend(self, t, k, log_beta, reward, girsanov):
        for i in range(log_beta.shape[0]):
            self.rows.append((t, k, i, float(log_beta[i]), float(reward[i]), float(girsanov[i])))


@dataclass
class FilterOutput:
    """Weighted ensembles at the observation times ``t = 1..T``.

    Index ``j`` of every per-time list refers to the state ``x_{j+1}`` after
    assimilating ``y_{j+1}``; ensembles are stored before end-of-window
    resampling.
    """

    ensembles: list[Ensemble]
    ess_trace: EssTrace
    log_evidence: np.ndarray
    n_particles: int
    weight_trace: WeightTrace | None = None
    window_log_weights: list[np.ndarray] = field(default_factory=list)
    method: str = "surge"

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean() for e in self.ensembles])

    @property
    def T(self) -> int:
        return len(self.ensembles)


def posterior_estimate(output: FilterOutput, t: int, phi: Callable[[np.ndarray], float]) -> float:
    """Self-normalized estimate ``sum_i w_i phi(x_i)`` at output index ``t``."""
    if not 0 <= t < output.T:
        raise IndexError(f"t={t} outside 0..{output.T - 1}")
    ens = output.ensembles[t]
    w = ens.normalized_weights()
    values = np.array([phi(x) for x in ens.particles], dtype=np.float64)
    return float(w @ values)


def as_observation_matrix(observations, dim_obs: int) -> np.ndarray:
    """Observations as a (T, M) array; a flat sequence is read as M = 1."""
    ys = np.asarray(observations, dtype=np.float64)
    ys = ys.reshape(ys.shape[0], -1)
    if ys.shape[1] != dim_obs:
        raise ValueError(f"observations have {ys.shape[1]} components, model expects {dim_obs}")
    return ys


def _as_ensemble(init, n_particles: int) -> Ensemble:
    ens = init if isinstance(init, Ensemble) else Ensemble(init)
    if ens.n_particles != n_particles:
        raise ValueError(f"initial ensemble has {ens.n_particles} particles, config says {n_particles}")
    return ens


def surge_filter(
    surrogate: TransitionSurrogate,
    obs_model: ObservationModel,
    observations,
    init_ensemble,
    config: FilterConfig,
) -> FilterOutput:
    """Run SURGE over ``observations`` (shape (T, M)).

    With ``config.reweight=False`` the guided sampler runs without weights or
    resampling (the uncorrected guided ensemble used as a comparison arm).
    """
    ys = as_observation_matrix(observations, obs_model.dim_obs)
    ens0 = _as_ensemble(init_ensemble, config.n_particles)
    n, K = config.n_particles, config.n_steps
    grid = uniform_grid(K)
    schedule = surrogate.schedule
    guidance = config.guidance
    incremental = config.mode == "incremental"
    res_cfg = config.resampling
    threshold = res_cfg.threshold_fraction * n

    x = ens0.particles.copy()
    ledger = WeightLedger(ens0.log_weights)
    ess_trace = EssTrace()
    weight_trace = WeightTrace() if config.record_weights else None
    ensembles: list[Ensemble] = []
    window_log_w: list[np.ndarray] = []
    log_evidence = np.zeros(ys.shape[0])

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else nullcontext()
    with pool as executor:
        for t, y in enumerate(ys):
            x_cond = x.copy()
            reward_prev = None
            path = []
            for k in range(K):
                rec = chunked_em_step(
                    surrogate, guidance, x, x_cond, y, grid[k], grid[k + 1],
                    seed=config.seed, t=t, k=k, executor=executor,
                )
                x = rec.x_after
                last = k == K - 1
                if not config.reweight:
                    if last:
                        ensembles.append(Ensemble(x))
                    continue

                if incremental or weight_trace is not None:
                    reward, girsanov, reward_prev = incremental_log_weight_parts(
                        rec, obs_model, y, schedule, reward_before=reward_prev, alpha=config.alpha
                    )
                    if weight_trace is not None:
                        weight_trace.extend(t, k, reward + girsanov, reward, girsanov)

                if incremental:
                    log_evidence[t] += ledger.update(reward + girsanov, t=t, k=k)
                else:
                    path.append(rec)
                    if not last:
                        continue
                    log_evidence[t] += ledger.update(
                        whole_step_log_weight(path, obs_model, y, schedule), t=t, k=k
                    )

                if last:
                    ensembles.append(Ensemble(x, ledger.log_w.copy()))
                    window_log_w.append(ledger.log_w.copy())
                elif not config.resample_every_k:
                    continue

                ess = ledger.ess()
                do_resample = ess < threshold
                if do_resample:
                    stream = resampling_stream(config.seed, t, WINDOW_END if last else k)
                    idx = resample_indices(ledger.weights(), res_cfg.scheme, stream)
                    x = x[idx]
                    x_cond = x_cond[idx]
                    if reward_prev is not None:
                        reward_prev = reward_prev[idx]
                    ledger.reset_uniform()
                ess_trace.append(t, k, ess, do_resample)

    return FilterOutput(
        ensembles=ensembles,
        ess_trace=ess_trace,
        log_evidence=log_evidence if config.reweight else np.full(ys.shape[0], np.nan),
        n_particles=n,
        weight_trace=weight_trace,
        window_log_weights=window_log_w,
        method="surge" if config.reweight else "guided_unweighted",
    )
