"""Ground-truth generators: linear-Gaussian state space and stochastic Lorenz-63."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Ensemble, Purpose, RngStream, gaussian_draw
from .observation import ObservationModel, make_arctan_partial_model, make_linear_model
from .surrogate import (
    GaussianBridgeSurrogate,
    LorenzParams,
    make_linear_gaussian_surrogate,
    make_lorenz_surrogate,
    psd_sqrt,
    rk4_map,
)

__all__ = [
    "LinearGaussianSystem",
    "LorenzBlowUpError",
    "LorenzSystem",
    "Scenario",
    "make_scenario",
    "read_scenario_csv",
    "simulate_lorenz",
    "write_scenario_csv",
]


class LorenzBlowUpError(FloatingPointError):
    pass


def simulate_lorenz(params: LorenzParams, x0, T: int, seed: int, *, stream: int = 0) -> np.ndarray:
    """``x_{t+1} = RK4(x_t; h) + noise_std * zeta_t`` for ``T`` steps.

    Returns the ``(T + 1, 3)`` trajectory including ``x0``. ``stream`` selects
    an independent noise family for the same seed.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    traj = np.empty((T + 1, 3))
    traj[0] = np.asarray(x0, dtype=np.float64)
    for t in range(T):
        x = rk4_map(traj[t], params)
        if params.noise_std > 0:
            x = x + params.noise_std * gaussian_draw(RngStream(seed, stream, t, 0, Purpose.SCENARIO), 3)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > 1e6:
            raise LorenzBlowUpError(f"Lorenz trajectory diverged at step {t + 1}; reduce h")
        traj[t + 1] = x
    return traj


@dataclass(frozen=True)
class LinearGaussianSystem:
    """``x_{t+1} ~ N(A x_t, Q)``, ``y = H x + N(0, gamma^2)``, ``x_0 ~ N(m0, P0)``."""

    A: tuple = ((0.9,),)
    Q: tuple = ((0.04,),)
    H: tuple = ((1.0,),)
    gamma: float = 0.05
    m0: tuple = (0.0,)
    P0: tuple = ((1.0,),)
    name: str = field(default="linear_gaussian", init=False)

    def arrays(self):
        return (np.array(self.A, dtype=float), np.array(self.Q, dtype=float),
                np.array(self.H, dtype=float), np.array(self.m0, dtype=float),
                np.array(self.P0, dtype=float))

    @property
    def dim(self) -> int:
        return len(self.m0)

    @property
    def R_cov(self) -> np.ndarray:
        return self.gamma**2 * np.eye(len(self.H))

    def surrogate(self) -> GaussianBridgeSurrogate:
        A, Q, *_ = self.arrays()
        return make_linear_gaussian_surrogate(A, Q)

    def observation_model(self) -> ObservationModel:
        return make_linear_model(np.array(self.H, dtype=float), self.gamma)

    def initial_law(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        _, _, _, m0, P0 = self.arrays()
        return m0, P0

    def sample_initial(self, seed: int, n: int, purpose: Purpose) -> np.ndarray:
        m0, P0 = self.initial_law(seed)
        z = gaussian_draw(RngStream(seed, np.arange(n), 0, 0, purpose), self.dim)
        return m0 + z @ psd_sqrt(P0).T

    def trajectory(self, seed: int, T: int) -> np.ndarray:
        A, Q, *_ = self.arrays()
        sq = psd_sqrt(Q)
        traj = np.empty((T + 1, self.dim))
        traj[0] = self.sample_initial(seed, 1, Purpose.SCENARIO)[0]
        for t in range(T):
            z = gaussian_draw(RngStream(seed, 0, t, 1, Purpose.SCENARIO), self.dim)
            traj[t + 1] = A @ traj[t] + sq @ z
        return traj

    def init_ensemble(self, seed: int, n: int, *, law_seed: int | None = None) -> Ensemble:
        """``n`` draws from the initial law; ``law_seed`` is accepted for parity (the law is fixed)."""
        return Ensemble(self.sample_initial(seed, n, Purpose.INIT))

    def descriptor(self) -> dict:
        d = asdict(self)
        d["name"] = self.name
        return d


@dataclass(frozen=True)
class LorenzSystem:
    """Stochastic Lorenz-63 observed through ``arctan`` of the first coordinate.

    The initial state is the end of a ``burn_in``-step run (discarded), perturbed
    by ``N(0, init_std^2 I)``; filters start from draws of that same law.
    """

    params: LorenzParams = field(default_factory=LorenzParams)
    gamma: float = 0.05
    burn_in: int = 1000
    init_std: float = 0.1
    name: str = field(default="lorenz63", init=False)

    dim = 3

    def surrogate(self) -> GaussianBridgeSurrogate:
        return make_lorenz_surrogate(self.params)

    def observation_model(self) -> ObservationModel:
        return make_arctan_partial_model(self.gamma)

    def initial_law(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        start = np.array([1.0, 1.0, 1.0]) + gaussian_draw(RngStream(seed, 0, 0, 0, Purpose.SCENARIO), 3)
        center = simulate_lorenz(self.params, start, self.burn_in, seed, stream=1)[-1]
        return center, self.init_std**2 * np.eye(3)

    def trajectory(self, seed: int, T: int) -> np.ndarray:
        center, P0 = self.initial_law(seed)
        x0 = center + self.init_std * gaussian_draw(RngStream(seed, 0, 0, 1, Purpose.SCENARIO), 3)
        return simulate_lorenz(self.params, x0, T, seed, stream=2)

    def init_ensemble(self, seed: int, n: int, *, law_seed: int | None = None) -> Ensemble:
        """``n`` draws (streams keyed by ``seed``) from the initial law of scenario ``law_seed``."""
        center, _ = self.initial_law(seed if law_seed is None else law_seed)
        z = gaussian_draw(RngStream(seed, np.arange(n), 0, 0, Purpose.INIT), 3)
        return Ensemble(center + self.init_std * z)

    def descriptor(self) -> dict:
        d = asdict(self)
        d["name"] = self.name
        return d


@dataclass(frozen=True)
class Scenario:
    """Truth ``x_0..x_T`` and observations ``y_1..y_T`` (``observations[t]`` pairs with ``true_trajectory[t+1]``)."""

    true_trajectory: np.ndarray
    observations: np.ndarray
    system: dict
    seed: int


def make_scenario(system, obs_model: ObservationModel | None, T: int, seed: int) -> Scenario:
    obs_model = obs_model or system.observation_model()
    traj = system.trajectory(seed, T)
    eps = gaussian_draw(RngStream(seed, np.arange(T), 0, 2, Purpose.SCENARIO), obs_model.dim_obs)
    obs = obs_model.operator(traj[1:]) + eps * obs_model.noise_std
    return Scenario(traj, obs, system.descriptor(), seed)


def write_scenario_csv(scenario: Scenario) -> str:
    """Columnar CSV text: a JSON header comment, then ``t, x1..xD, y1..yM``."""
    buf = io.StringIO()
    header = {"seed": scenario.seed, "system": scenario.system}
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    D = scenario.true_trajectory.shape[1]
    M = scenario.observations.shape[1]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(D)] + [f"y{j + 1}" for j in range(M)])
    for t, x in enumerate(scenario.true_trajectory):
        y = [""] * M if t == 0 else [repr(float(v)) for v in scenario.observations[t - 1]]
        w.writerow([t] + [repr(float(v)) for v in x] + y)
    return buf.getvalue()


def read_scenario_csv(text: str) -> Scenario:
    lines = [ln for ln in text.splitlines() if ln]
    header = json.loads(lines[0][2:])
    rows = list(csv.reader(ln for ln in lines[1:] if not ln.startswith("#")))
    cols = rows[0]
    D = sum(c.startswith("x") for c in cols)
    data = rows[1:]
    traj = np.array([[float(v) for v in r[1:1 + D]] for r in data])
    obs = np.array([[float(v) for v in r[1 + D:]] for r in data[1:]])
    return Scenario(traj, obs, header["system"], header["seed"])
