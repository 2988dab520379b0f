"""Girsanov importance weights with telescoped likelihood incorporation.

For one internal step the log-increment is

    log beta = [a(s_{k+1}) R(x_{k+1}) - a(s_k) R(x_k)]
               - u . sqrt(ds) xi - 0.5 |u|^2 ds,     u = Sigma^{1/2}(s_k) grad_G(x_k),

with ``R(x) = log p(y | x)`` and the reward schedule ``a(s) = s``. The reward
parts telescope to ``R(x_1)`` over a window that starts at 0 and ends at 1.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import WeightCollapseError, normalize_log_weights
from .observation import ObservationModel
from .propagation import PathStepRecord
from .surrogate import VarianceSchedule

__all__ = [
    "WeightLedger",
    "girsanov_log_weight",
    "incremental_log_weight",
    "incremental_log_weight_parts",
    "linear_schedule",
    "whole_step_log_weight",
]


def linear_schedule(s: float) -> float:
    return s


def girsanov_log_weight(record: PathStepRecord, schedule: VarianceSchedule) -> np.ndarray:
    """``-u . sqrt(ds) xi - 0.5 |u|^2 ds`` per particle, using the stored noise."""
    u = record.grad_g @ schedule.sqrt(record.s_k).T
    ds = record.ds
    return -np.sqrt(ds) * np.sum(u * record.noise, axis=-1) - 0.5 * ds * np.sum(u * u, axis=-1)


def _scaled_reward(a: float, reward: np.ndarray) -> np.ndarray:
    # a(0) R = 0 even where R = -inf
    if a == 0.0:
        return np.zeros_like(reward)
    return a * reward


def incremental_log_weight_parts(
    record: PathStepRecord,
    model: ObservationModel,
    y,
    schedule: VarianceSchedule,
    *,
    reward_before: np.ndarray | None = None,
    reward_after: np.ndarray | None = None,
    alpha: Callable[[float], float] = linear_schedule,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reward and Girsanov parts of ``log beta`` for a batch of particles.

    Returns ``(reward_part, girsanov_part, R(x_after))``; the last item can be
    passed back as ``reward_before`` for the next step so ``R`` is evaluated once
    per state.
    """
    a_before = alpha(record.s_k)
    a_after = alpha(record.s_next)
    if reward_after is None:
        reward_after = np.atleast_1d(model.log_likelihood(y, record.x_after))
    if reward_before is None:
        if a_before == 0.0:
            reward_before = np.zeros(record.x_before.shape[0])
        else:
            reward_before = np.atleast_1d(model.log_likelihood(y, record.x_before))
    after = _scaled_reward(a_after, reward_after)
    before = _scaled_reward(a_before, reward_before)
    with np.errstate(invalid="ignore"):
        reward = after - before
    # -inf states stay dead
    reward = np.where(np.isneginf(after) | np.isneginf(before), -np.inf, reward)
    return reward, girsanov_log_weight(record, schedule), reward_after


def incremental_log_weight(
    record: PathStepRecord,
    model: ObservationModel,
    y,
    schedule: VarianceSchedule,
    **kwargs,
) -> np.ndarray:
    """Per-particle ``log beta`` for one internal step."""
    reward, girsanov, _ = incremental_log_weight_parts(record, model, y, schedule, **kwargs)
    return reward + girsanov


def whole_step_log_weight(
    path: Sequence[PathStepRecord], model: ObservationModel, y, schedule: VarianceSchedule
) -> np.ndarray:
    """``log p(y | x_1)`` minus the Girsanov exponent accumulated over the path."""
    if not path or path[0].s_k != 0.0 or path[-1].s_next != 1.0:
        raise ValueError("path must cover s in [0, 1]")
    girsanov = np.zeros(path[0].x_before.shape[0])
    for rec in path:
        girsanov += girsanov_log_weight(rec, schedule)
    return np.atleast_1d(model.log_likelihood(y, path[-1].x_after)) + girsanov


class WeightLedger:
    """Normalized per-particle log-weights plus the running evidence estimate.

    The stored log-weights always sum (in linear scale) to one; ``update``
    returns the log of the weighted mean increment, i.e. the contribution of
    this step to the log normalizing constant.
    """

    def __init__(self, log_w, *, keep_history: bool = False):
        self.log_w = normalize_log_weights(log_w)[0]
        with np.errstate(divide="ignore"):
            self.log_w = np.log(self.log_w)
        self.history: list[np.ndarray] | None = [] if keep_history else None

    @property
    def n(self) -> int:
        return self.log_w.shape[0]

    def update(self, increment, *, t: int | None = None, k: int | None = None) -> float:
        increment = np.asarray(increment, dtype=np.float64)
        if self.history is not None:
            self.history.append(increment.copy())
        with np.errstate(invalid="ignore"):
            new = self.log_w + increment
        new[np.isneginf(self.log_w) | np.isneginf(increment)] = -np.inf
        if np.any(np.isnan(new)):
            raise FloatingPointError(f"NaN log-weight at t={t}, k={k}")
        try:
            w, log_z = normalize_log_weights(new)
        except WeightCollapseError:
            raise WeightCollapseError(t=t, k=k) from None
        self.log_w = new - log_z
        return log_z

    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    def ess(self) -> float:
        w = self.weights()
        return float(1.0 / np.sum(w * w))

    def reset_uniform(self) -> None:
        self.log_w = np.full(self.n, -np.log(self.n))
