"""Euler-Maruyama simulation of the guided transition SDE.

All operations are vectorized over particles: a ``PathStepRecord`` holds one
internal step for a whole batch, row ``i`` belonging to particle ``ids[i]``.
Particles are processed in fixed-size chunks so results do not depend on the
number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .core import Purpose, RngStream, gaussian_draw
from .guidance import GuidancePotential
from .surrogate import TransitionSurrogate

__all__ = [
    "CHUNK_SIZE",
    "PathStepRecord",
    "PropagationError",
    "chunked_em_step",
    "em_step",
    "propagate_window",
    "uniform_grid",
]

CHUNK_SIZE = 128


class PropagationError(FloatingPointError):
    def __init__(self, message, *, particle=None, t=None, k=None):
        super().__init__(f"{message} (particle={particle}, t={t}, k={k})")
        self.particle = particle
        self.t = t
        self.k = k


@dataclass(frozen=True)
class PathStepRecord:
    """One internal step ``s_k -> s_next`` of a batch of guided paths.

    ``x_after == x_before + (drift + Sigma grad_g) ds + Sigma^{1/2} sqrt(ds) noise``.
    """

    x_before: np.ndarray
    x_after: np.ndarray
    noise: np.ndarray
    s_k: float
    s_next: float
    grad_g: np.ndarray
    drift: np.ndarray

    @property
    def ds(self) -> float:
        return self.s_next - self.s_k

    def take(self, idx) -> PathStepRecord:
        return PathStepRecord(
            self.x_before[idx], self.x_after[idx], self.noise[idx],
            self.s_k, self.s_next, self.grad_g[idx], self.drift[idx],
        )


def uniform_grid(n_steps: int) -> np.ndarray:
    if n_steps < 1:
        raise ValueError("number of internal steps must be >= 1")
    return np.arange(n_steps + 1) / n_steps


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0 or grid[-1] != 1.0:
        raise ValueError("grid must run from 0 to 1 with at least one step")
    if not np.allclose(np.diff(grid), 1.0 / (grid.size - 1), rtol=0, atol=1e-12):
        raise ValueError("grid must be uniform")
    return grid


def em_step(
    surrogate: TransitionSurrogate,
    guidance: GuidancePotential,
    x,
    x_cond,
    y,
    s_k: float,
    ds: float,
    rng: RngStream | None,
    *,
    s_next: float | None = None,
    noise=None,
) -> PathStepRecord:
    """One Euler-Maruyama step of the guided SDE for a batch of particles.

    The noise is drawn from ``rng`` (one row per addressed particle) and stored
    on the record; the weight update must consume exactly that array.
    ``s_next`` pins the recorded end time to a grid node (defaults to ``s_k + ds``).
    A caller-supplied ``noise`` array (shape (N, D)) replaces the stream draw.
    """
    if not (ds > 0 and s_k >= 0 and s_k + ds <= 1.0 + 1e-12):
        raise ValueError(f"invalid step s_k={s_k}, ds={ds}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_cond = np.atleast_2d(np.asarray(x_cond, dtype=np.float64))
    cov = surrogate.schedule.cov(s_k)
    sqrt_cov = surrogate.schedule.sqrt(s_k)
    if noise is None:
        noise = gaussian_draw(rng, x.shape[1])
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    drift = surrogate.drift(x, s_k, x_cond)
    grad_g = np.zeros_like(x) if guidance.is_zero else guidance(x, s_k, y, x_cond)
    x_after = x + (drift + grad_g @ cov.T) * ds + np.sqrt(ds) * noise @ sqrt_cov.T
    bad = ~np.all(np.isfinite(x_after), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        if rng is None:
            raise PropagationError("non-finite drift or guidance", particle=i)
        pid = int(np.atleast_1d(rng.particle)[i])
        raise PropagationError("non-finite drift or guidance", particle=pid, t=rng.t, k=rng.k)
    if s_next is None:
        s_next = 1.0 if abs(s_k + ds - 1.0) < 1e-12 else s_k + ds
    return PathStepRecord(x, x_after, noise, s_k, s_next, grad_g, drift)


def _concat(records: list[PathStepRecord]) -> PathStepRecord:
    if len(records) == 1:
        return records[0]
    first = records[0]
    return PathStepRecord(
        np.concatenate([r.x_before for r in records]),
        np.concatenate([r.x_after for r in records]),
        np.concatenate([r.noise for r in records]),
        first.s_k,
        first.s_next,
        np.concatenate([r.grad_g for r in records]),
        np.concatenate([r.drift for r in records]),
    )


def chunked_em_step(
    surrogate, guidance, x, x_cond, y, s_k, s_next, *, seed, t, k, executor: Executor | None = None
) -> PathStepRecord:
    """``em_step`` over all particles, split in fixed chunks (optionally threaded)."""
    n = x.shape[0]
    bounds = [(lo, min(lo + CHUNK_SIZE, n)) for lo in range(0, n, CHUNK_SIZE)]

    def run(b):
        lo, hi = b
        rng = RngStream(seed, np.arange(lo, hi), t, k, Purpose.PROPAGATE)
        return em_step(
            surrogate, guidance, x[lo:hi], x_cond[lo:hi], y, s_k, s_next - s_k, rng, s_next=s_next
        )

    if executor is None or len(bounds) == 1:
        parts = [run(b) for b in bounds]
    else:
        parts = list(executor.map(run, bounds))
    return _concat(parts)


def propagate_window(
    surrogate: TransitionSurrogate,
    guidance: GuidancePotential,
    particles,
    x_cond,
    y,
    grid,
    *,
    seed: int,
    t: int = 0,
    executor: Executor | None = None,
) -> list[PathStepRecord]:
    """Simulate every particle across one assimilation window.

    Returns one batched record per internal step; particle ``i`` uses the
    streams ``(seed, i, t, k)``.
    """
    grid = _check_grid(grid)
    x = np.atleast_2d(np.asarray(particles, dtype=np.float64))
    x_cond = np.atleast_2d(np.asarray(x_cond, dtype=np.float64))
    records = []
    for k in range(grid.size - 1):
        rec = chunked_em_step(
            surrogate, guidance, x, x_cond, y, grid[k], grid[k + 1],
            seed=seed, t=t, k=k, executor=executor,
        )
        records.append(rec)
        x = rec.x_after
    return records
