"""Shared numeric types, ensemble containers and counter-based random streams.

Random numbers are produced by a Philox4x64-10 block cipher keyed by the run
seed and a *purpose* tag and indexed by the counter ``(particle, t, k, block)``.
Any single draw can therefore be regenerated without replaying the draws that
came before it, and the result never depends on how particles are split across
workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numba as nb
import numpy as np

__all__ = [
    "Ensemble",
    "Purpose",
    "RngStream",
    "WeightCollapseError",
    "gaussian_draw",
    "normalize_log_weights",
    "philox4x64",
    "uniform_draw",
]


class WeightCollapseError(RuntimeError):
    """All particle weights vanished (every log-weight is ``-inf``)."""

    def __init__(self, message: str = "total weight collapse", *, t: int | None = None, k: int | None = None):
        if t is not None:
            message = f"{message} at t={t}" + (f", k={k}" if k is not None else "")
        super().__init__(message)
        self.t = t
        self.k = k


def normalize_log_weights(log_w) -> tuple[np.ndarray, float]:
    """Normalize log-weights with the log-sum-exp trick.

    Parameters
    ----------
    log_w : array_like, shape (N,)
        Unnormalized log-weights. ``-inf`` entries are allowed as long as at
        least one entry is finite.

    Returns
    -------
    weights : ndarray, shape (N,)
        Normalized weights summing to one.
    log_normalizer : float
        ``log(sum(exp(log_w)))``.
    """
    log_w = np.asarray(log_w, dtype=np.float64)
    if log_w.ndim != 1 or log_w.size == 0:
        raise ValueError("log-weights must be a non-empty vector")
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise ValueError("log-weights must not contain NaN or +inf")
    top = log_w.max()
    if top == -np.inf:
        raise WeightCollapseError()
    shifted = np.exp(log_w - top)
    total = shifted.sum()
    return shifted / total, float(top + np.log(total))


@dataclass(frozen=True)
class Ensemble:
    """N particles in R^D with per-particle log-weights."""

    particles: np.ndarray
    log_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        particles = np.array(self.particles, dtype=np.float64)
        if particles.ndim == 1:
            particles = particles[:, None]
        if particles.ndim != 2 or particles.shape[0] < 1:
            raise ValueError("particles must have shape (N, D) with N >= 1")
        if not np.all(np.isfinite(particles)):
            raise ValueError("particles must be finite")
        n = particles.shape[0]
        if self.log_weights is None:
            log_w = np.full(n, -np.log(n))
        else:
            log_w = np.array(self.log_weights, dtype=np.float64).reshape(-1)
            if log_w.shape != (n,):
                raise ValueError(f"expected {n} log-weights, got {log_w.shape}")
        particles.flags.writeable = False
        log_w.flags.writeable = False
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "log_weights", log_w)

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def normalized_weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)[0]

    def normalized(self) -> Ensemble:
        """Same particles with log-weights shifted so the weights sum to one."""
        w, log_z = normalize_log_weights(self.log_weights)
        return Ensemble(self.particles, self.log_weights - log_z)

    def mean(self) -> np.ndarray:
        return self.normalized_weights() @ self.particles

    def ess(self) -> float:
        w = self.normalized_weights()
        return float(1.0 / np.sum(w * w))


# --- Philox4x64-10 ---------------------------------------------------------

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


@nb.njit(cache=True)
def _philox_kernel(counters, key0, key1, out):
    for i in range(counters.shape[0]):
        c0 = counters[i, 0]
        c1 = counters[i, 1]
        c2 = counters[i, 2]
        c3 = counters[i, 3]
        k0 = key0
        k1 = key1
        for r in range(10):
            if r > 0:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0 = hi1 ^ c1 ^ k0
            c1 = lo1
            c2 = hi0 ^ c3 ^ k1
            c3 = lo0
        out[i, 0] = c0
        out[i, 1] = c1
        out[i, 2] = c2
        out[i, 3] = c3


def philox4x64(counters, key) -> np.ndarray:
    """Encrypt 256-bit counters with Philox4x64-10.

    Parameters
    ----------
    counters : array_like of uint64, shape (n, 4)
    key : pair of uint64

    Returns
    -------
    ndarray of uint64, shape (n, 4)
    """
    counters = np.ascontiguousarray(counters, dtype=np.uint64).reshape(-1, 4)
    out = np.empty_like(counters)
    _philox_kernel(counters, np.uint64(key[0]), np.uint64(key[1]), out)
    return out


class Purpose(IntEnum):
    """Domain tags that separate the stream families of one run."""

    PROPAGATE = 0
    RESAMPLE = 1
    SCENARIO = 2
    INIT = 3
    ENKF = 4
    TEST = 15


_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Address of a reproducible random stream.

    ``particle`` may be an int or an integer array; in the latter case draws are
    returned with a leading particle axis, row ``i`` being exactly the draw of
    stream ``(seed, particle[i], t, k)``.
    """

    seed: int
    particle: int | np.ndarray = 0
    t: int = 0
    k: int = 0
    purpose: Purpose = Purpose.PROPAGATE

    def key(self) -> tuple[int, int]:
        return (int(self.seed) & _MASK64, int(self.purpose))

    def raw(self, n_blocks: int) -> np.ndarray:
        """Raw 64-bit words, shape ``(P, 4 * n_blocks)`` for P particles."""
        particles = np.atleast_1d(np.asarray(self.particle, dtype=np.int64)).astype(np.uint64)
        p = particles.shape[0]
        ctr = np.empty((p, n_blocks, 4), dtype=np.uint64)
        ctr[:, :, 0] = particles[:, None]
        ctr[:, :, 1] = np.uint64(self.t)
        ctr[:, :, 2] = np.uint64(self.k)
        ctr[:, :, 3] = np.arange(n_blocks, dtype=np.uint64)[None, :]
        return philox4x64(ctr.reshape(-1, 4), self.key()).reshape(p, 4 * n_blocks)


def _to_unit(words: np.ndarray) -> np.ndarray:
    # 53-bit mantissa, values in (0, 1]
    return ((words >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def _squeeze(stream: RngStream, arr: np.ndarray) -> np.ndarray:
    return arr[0] if np.ndim(stream.particle) == 0 else arr


def uniform_draw(rng: RngStream, n: int = 1) -> np.ndarray:
    """``n`` uniforms in (0, 1] per addressed particle."""
    words = rng.raw(-(-n // 4))[:, :n]
    return _squeeze(rng, _to_unit(words))


def gaussian_draw(rng: RngStream, dim: int) -> np.ndarray:
    """Standard normal vector of length ``dim`` (Box-Muller on Philox output)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    n_pairs = -(-dim // 2)
    words = rng.raw(-(-n_pairs // 2))
    u = _to_unit(words)
    radius = np.sqrt(-2.0 * np.log(u[:, 0::2]))
    angle = 2.0 * np.pi * u[:, 1::2]
    z = np.empty((u.shape[0], 2 * radius.shape[1]))
    z[:, 0::2] = radius * np.cos(angle)
    z[:, 1::2] = radius * np.sin(angle)
    return _squeeze(rng, z[:, :dim])
