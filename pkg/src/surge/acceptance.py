"""Acceptance checks for the filter and its oracles.

Each ``criterion_<n>`` function runs one check at its stated tolerance and
returns a ``CriterionResult``; ``run_suite`` prints one PASS/FAIL line per
check. Criteria 3, 4 and 9 also return their result tables as CSV text so the
determinism check can compare them byte for byte across thread counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .baselines import KalmanState, bootstrap_pf, bridge_sampler, kalman_filter
from .core import Purpose, RngStream
from .filter import FilterConfig, surge_filter
from .guidance import GuidancePotential, exact_doob_guidance, likelihood_gradient_guidance, zero_guidance
from .metrics import rmse
from .observation import make_arctan_partial_model, make_linear_model
from .propagation import propagate_window, uniform_grid
from .reports import config_hash, csv_table
from .resampling import ResamplingConfig, resample_indices
from .surrogate import make_linear_gaussian_surrogate
from .systems import LinearGaussianSystem, LorenzSystem, make_scenario
from .weights import incremental_log_weight_parts, whole_step_log_weight

__all__ = ["CriterionResult", "CRITERIA", "run_suite"]

BENCHMARK_SCENARIO_SEED = 2024
LAMBDAS = (0.0, 0.5, 1.0, 2.0)
LORENZ_LAMBDA = 1.0


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float
    limit: float | None
    artifacts: dict[str, str] = field(default_factory=dict, repr=False)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        limit = f" (limit {self.limit:g}s)" if self.limit is not None else ""
        return f"[{status}] {self.number:2d}. {self.name}: {self.detail}; {self.runtime:.1f}s{limit}"


def _timed(number: int, name: str, limit: float | None):
    """Wrap ``fn() -> (ok, detail, artifacts)`` into a timed ``CriterionResult``."""

    def wrap(fn: Callable[..., tuple[bool, str, dict]]):
        def run(*args, **kwargs) -> CriterionResult:
            start = time.perf_counter()
            ok, detail, artifacts = fn(*args, **kwargs)
            elapsed = time.perf_counter() - start
            in_time = limit is None or elapsed <= limit
            if not in_time:
                detail += "; over the runtime limit"
            return CriterionResult(number, name, ok and in_time, detail, elapsed, limit, artifacts)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


# --- shared fixtures -----------------------------------------------------------


def _random_linear_guidance(rng: np.random.Generator, dim: int) -> GuidancePotential:
    """``grad_G(x, s) = W x (1 + s) + b``: smooth, state- and time-dependent."""
    W = rng.normal(size=(dim, dim))
    b = rng.normal(size=dim)

    def grad(x, s, y, x_cond=None):
        return np.atleast_2d(x) @ W.T * (1.0 + s) + b

    return GuidancePotential(grad, "random-linear")


def _random_paths(seed: int, n_paths: int, K: int):
    """``n_paths`` guided 2-D paths with a nonlinear observation model."""
    rng = np.random.default_rng(seed)
    A = np.eye(2) + 0.1 * rng.normal(size=(2, 2))
    Q = np.diag(rng.uniform(0.05, 0.5, size=2))
    surrogate = make_linear_gaussian_surrogate(A, Q)
    guidance = _random_linear_guidance(rng, 2)
    model = make_arctan_partial_model(0.2)
    x0 = rng.normal(size=(n_paths, 2))
    y = np.array([0.3])
    path = propagate_window(surrogate, guidance, x0, x0, y, uniform_grid(K), seed=seed)
    return surrogate, model, y, path


def _benchmark():
    system = LinearGaussianSystem()
    scenario = make_scenario(system, None, 20, BENCHMARK_SCENARIO_SEED)
    A, Q, H, m0, P0 = system.arrays()
    kf = kalman_filter(A, Q, H, system.R_cov, scenario.observations, KalmanState(m0, P0))
    return system, scenario, np.array([s.mean[0] for s in kf])


def _seed_means(system, scenario, guidance, *, n, K, seeds, reweight=True, workers=1, **cfg):
    model, surrogate = system.observation_model(), system.surrogate()
    means = []
    for seed in seeds:
        config = FilterConfig(n, K, seed, guidance=guidance, reweight=reweight, workers=workers, **cfg)
        out = surge_filter(surrogate, model, scenario.observations, system.init_ensemble(seed, n), config)
        means.append(out.means[:, 0])
    return np.array(means)


def _z_scores(means: np.ndarray, target: np.ndarray) -> np.ndarray:
    se = means.std(axis=0, ddof=1) / np.sqrt(means.shape[0])
    return (means.mean(axis=0) - target) / se


def _guidance_for(system, lam: float) -> GuidancePotential:
    return likelihood_gradient_guidance(system.observation_model(), system.surrogate(), lam)


# --- criteria ------------------------------------------------------------------


@_timed(1, "telescoping identity", 1.0)
def criterion_1():
    worst = 0.0
    for K in (1, 2, 7, 64):
        surrogate, model, y, path = _random_paths(100 + K, 200, K)
        total = np.zeros(200)
        scale = np.zeros(200)
        reward_prev = None
        for rec in path:
            reward, _, reward_prev = incremental_log_weight_parts(
                rec, model, y, surrogate.schedule, reward_before=reward_prev
            )
            total += reward
            scale = np.maximum(scale, np.abs(rec.s_next * reward_prev))
        final = np.atleast_1d(model.log_likelihood(y, path[-1].x_after))
        rel = np.abs(total - final) / np.maximum(np.abs(final), scale)
        worst = max(worst, float(rel.max()))
    return worst <= 1e-12, f"max relative error {worst:.2e} (tol 1e-12)", {}


@_timed(2, "whole-step vs incremental weights", 1.0)
def criterion_2():
    surrogate, model, y, path = _random_paths(7, 200, 16)
    schedule = surrogate.schedule
    acc = np.zeros(200)
    reward_prev = None
    for rec in path:
        reward, girsanov, reward_prev = incremental_log_weight_parts(
            rec, model, y, schedule, reward_before=reward_prev
        )
        acc += reward + girsanov
    whole = whole_step_log_weight(path, model, y, schedule)
    err = np.abs(acc - whole) / np.maximum(1.0, np.abs(whole))
    return bool(err.max() <= 1e-12), f"max relative error {err.max():.2e} (tol 1e-12)", {}


@_timed(3, "zero-guidance reduction to bootstrap PF", 5.0)
def criterion_3(workers: int = 1):
    system = LinearGaussianSystem()
    scenario = make_scenario(system, None, 10, BENCHMARK_SCENARIO_SEED)
    model, surrogate = system.observation_model(), system.surrogate()
    n, K, seed = 64, 32, 11
    init = system.init_ensemble(seed, n)
    config = FilterConfig(n, K, seed, guidance=zero_guidance(), resample_every_k=False, workers=workers)
    surge = surge_filter(surrogate, model, scenario.observations, init, config)
    bpf = bootstrap_pf(
        bridge_sampler(surrogate, K, seed, workers=workers), model, scenario.observations, init,
        config.resampling, seed=seed,
    )
    worst = max(
        float(np.abs(a.normalized_weights() - b.normalized_weights()).max())
        for a, b in zip(surge.ensembles, bpf.ensembles)
    )
    rows = [
        (t + 1, i, wa, wb)
        for t, (a, b) in enumerate(zip(surge.ensembles, bpf.ensembles))
        for i, (wa, wb) in enumerate(zip(a.normalized_weights(), b.normalized_weights()))
    ]
    digest = config_hash({"criterion": 3, "n": n, "k": K, "seed": seed})
    csv = csv_table(("t", "particle", "w_surge", "w_bpf"), rows, digest)
    return worst <= 1e-12, f"max |w_surge - w_bpf| = {worst:.2e} over T=10, N=64", {"criterion3.csv": csv}


def _kalman_match(workers: int = 1):
    system, scenario, kf = _benchmark()
    z_max, tables = {}, []
    for lam in LAMBDAS:
        means = _seed_means(system, scenario, _guidance_for(system, lam), n=512, K=32,
                            seeds=range(20), workers=workers)
        z_max[lam] = float(np.abs(_z_scores(means, kf)).max())
        tables += [(lam, seed, t + 1, m) for seed, row in enumerate(means) for t, m in enumerate(row)]
    csv = csv_table(("lambda", "seed", "t", "mean"), tables, config_hash({"criterion": 4}))
    return z_max, csv


@_timed(4, "Kalman oracle match", 60.0)
def criterion_4(workers: int = 1):
    z_max, csv = _kalman_match(workers)
    ok = all(z <= 3.0 for z in z_max.values())
    detail = "max |z| per lambda: " + ", ".join(f"{lam:g}: {z:.2f}" for lam, z in z_max.items()) + " (tol 3)"
    return ok, detail, {"criterion4.csv": csv}


@_timed(5, "bias correction at lambda=2", 30.0)
def criterion_5():
    system, scenario, kf = _benchmark()
    guidance = _guidance_for(system, 2.0)
    unweighted = _seed_means(system, scenario, guidance, n=512, K=32, seeds=range(20), reweight=False)
    weighted = _seed_means(system, scenario, guidance, n=512, K=32, seeds=range(20))
    z_u = float(np.abs(_z_scores(unweighted, kf)).max())
    z_w = float(np.abs(_z_scores(weighted, kf)).max())
    ok = z_u > 5.0 and z_w <= 3.0
    return ok, f"unweighted max |z| {z_u:.1f} (need > 5), weighted max |z| {z_w:.2f} (need <= 3)", {}


@_timed(6, "exact Doob guidance ESS", 30.0)
def criterion_6():
    system, scenario, _ = _benchmark()
    A, Q, H, *_ = system.arrays()
    guidance = exact_doob_guidance(A, Q, H, system.R_cov)
    model, surrogate = system.observation_model(), system.surrogate()
    worst = 1.0
    for seed in range(10):
        # uniform weights at every window start, so each ESS is the window's own
        config = FilterConfig(64, 256, seed, guidance=guidance, resample_every_k=False,
                              resampling=ResamplingConfig(threshold_fraction=1.0))
        out = surge_filter(surrogate, model, scenario.observations, system.init_ensemble(seed, 64), config)
        worst = min(worst, min(out.ess_trace.ess) / 64)
    return worst >= 0.99, f"min per-window ESS/N = {worst:.3f} (need >= 0.99)", {}


@_timed(7, "resampling unbiasedness", 10.0)
def criterion_7():
    particles = np.array([-1.3, 0.2, 0.7, 1.9, 3.1])
    weights = np.array([0.05, 0.4, 0.1, 0.3, 0.15])
    target = float(weights @ particles)
    reps = 100_000
    parts = []
    ok = True
    for scheme in ("multinomial", "systematic"):
        est = np.empty(reps)
        for r in range(reps):
            idx = resample_indices(weights, scheme, RngStream(3, 0, r, 0, Purpose.TEST))
            est[r] = particles[idx].mean()
        se = est.std(ddof=1) / np.sqrt(reps)
        z = (est.mean() - target) / se
        ok &= abs(z) <= 4.0
        parts.append(f"{scheme} z={z:+.2f}")
    return bool(ok), ", ".join(parts) + " (tol 4)", {}


@_timed(8, "gradual incorporation lowers weight variance", 120.0)
def criterion_8():
    system = LorenzSystem()
    model, surrogate = system.observation_model(), system.surrogate()
    guidance = _guidance_for(system, LORENZ_LAMBDA)
    var_inc, var_whole = [], []
    for seed in range(20):
        scenario = make_scenario(system, None, 15, seed)
        init = system.init_ensemble(seed, 64)
        for mode, sink in (("incremental", var_inc), ("whole_step", var_whole)):
            config = FilterConfig(64, 64, seed, guidance=guidance, mode=mode)
            out = surge_filter(surrogate, model, scenario.observations, init, config)
            sink += [np.var(w) for w in out.window_log_weights]
    ratio = float(np.mean(var_inc) / np.mean(var_whole))
    return ratio <= 1.0, f"var(incremental)/var(whole-step) = {ratio:.3f} (need <= 1)", {}


def _lorenz_paired(workers: int = 1, resample_every_k: bool = True):
    system = LorenzSystem()
    model, surrogate = system.observation_model(), system.surrogate()
    guidance = _guidance_for(system, LORENZ_LAMBDA)
    n, K = 20, 600
    rows = []
    for seed in range(20):
        scenario = make_scenario(system, None, 15, seed)
        truth = scenario.true_trajectory[1:]
        init = system.init_ensemble(seed, n)
        config = FilterConfig(n, K, seed, guidance=guidance, workers=workers, resample_every_k=resample_every_k)
        surge = surge_filter(surrogate, model, scenario.observations, init, config)
        bpf = bootstrap_pf(bridge_sampler(surrogate, K, seed, workers=workers), model,
                           scenario.observations, init, config.resampling, seed=seed)
        rows.append((seed, rmse(surge.means, truth), rmse(bpf.means, truth)))
    return rows


@_timed(9, "Lorenz ordering vs bootstrap PF", 300.0)
def criterion_9(workers: int = 1):
    rows = _lorenz_paired(workers)
    diff = np.array([s - b for _, s, b in rows])
    upper = diff.mean() + stats.t.ppf(0.95, diff.size - 1) * diff.std(ddof=1) / np.sqrt(diff.size)
    csv = csv_table(("scenario", "rmse_surge", "rmse_bpf"), rows, config_hash({"criterion": 9}))
    detail = (f"mean paired RMSE difference {diff.mean():+.4f}, one-sided 95% upper bound "
              f"{upper:+.4f} (need <= 0)")
    return bool(upper <= 0.0), detail, {"criterion9.csv": csv}


@_timed(10, "determinism across thread counts", None)
def criterion_10(reference: dict[int, CriterionResult] | None = None, workers: int = 4):
    reference = reference or {}
    mismatched, over = [], []
    for number, fn in ((3, criterion_3), (4, criterion_4), (9, criterion_9)):
        base = reference.get(number) or fn(workers=1)
        threaded = fn(workers=workers)
        if threaded.artifacts != base.artifacts or not base.artifacts:
            mismatched.append(number)
        if threaded.limit is not None and threaded.runtime > threaded.limit:
            over.append(number)
    ok = not mismatched and not over
    detail = f"criteria 3, 4, 9 at 1 vs {workers} threads: "
    detail += "byte-identical CSVs" if not mismatched else f"CSV mismatch in {mismatched}"
    if over:
        detail += f"; threaded runs over time in {over}"
    return ok, detail, {}


@_timed(11, "gradient checks", 5.0)
def criterion_11():
    rng = np.random.default_rng(5)
    worst = 0.0

    def fd(f, x, h=1e-6):
        g = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            g[i] = (f(x + e) - f(x - e)) / (2 * h)
        return g

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))

    H = rng.normal(size=(2, 3))
    models = [make_linear_model(H, 0.3), make_arctan_partial_model(0.05)]
    A, Q = 0.9 * np.eye(3) + 0.05 * rng.normal(size=(3, 3)), np.diag([0.04, 0.1, 0.02])
    surrogate = make_linear_gaussian_surrogate(A, Q)
    doob = exact_doob_guidance(A, Q, H, 0.09 * np.eye(2))
    for _ in range(100):
        x = rng.normal(size=3)
        x_cond = rng.normal(size=3)
        s = rng.uniform(0.0, 0.95)
        for model in models:
            y = model.operator(rng.normal(size=(1, 3)))[0] + model.noise_std * rng.normal(size=model.dim_obs)
            worst = max(worst, rel(model.grad_log_likelihood(y, x), fd(lambda z: model.log_likelihood(y, z), x)))
            guide = likelihood_gradient_guidance(model, surrogate, 0.7)
            v = surrogate.drift(x_cond[None], s, x_cond[None])[0]
            analytic = guide.grad_G(x[None], s, y, x_cond[None])[0]
            numeric = fd(lambda z: 0.7 * model.log_likelihood(y, z + v * (1 - s)), x)
            worst = max(worst, rel(analytic, numeric))
        y = H @ rng.normal(size=3) + 0.3 * rng.normal(size=2)
        log_h = doob.extras["log_h"]
        analytic = doob.grad_G(x[None], s, y, x_cond[None])[0]
        numeric = fd(lambda z: float(log_h(z[None], s, y, x_cond[None])[0]), x)
        worst = max(worst, rel(analytic, numeric))
    return worst <= 1e-5, f"max relative error {worst:.2e} over 100 points per gradient (tol 1e-5)", {}


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
    7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11,
}


def run_suite(only=None, workers: int = 4, echo: Callable[[str], None] = print) -> list[CriterionResult]:
    """Run the selected criteria (all by default) and print one line each."""
    numbers = sorted(only) if only else sorted(CRITERIA)
    results: dict[int, CriterionResult] = {}
    for number in numbers:
        if number == 10:
            result = criterion_10(reference=results, workers=workers)
        else:
            result = CRITERIA[number]()
        results[number] = result
        echo(result.line())
    return list(results.values())
