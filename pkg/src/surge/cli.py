"""Command-line experiment runner.

Configuration is a flat ``key = value`` text file; command-line flags override
file values. ``run`` writes metrics, estimates and ESS-trace CSVs (plus an
optional per-step weight trace); ``generate-scenario`` writes a ground-truth
scenario; ``compare --suite acceptance`` runs the acceptance checks.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .baselines import KalmanState, bootstrap_pf, bridge_sampler, enkf, kalman_filter
from .core import WeightCollapseError
from .filter import FilterConfig, FilterOutput, surge_filter
from .guidance import exact_doob_guidance, likelihood_gradient_guidance, zero_guidance
from .metrics import metric_report, rmse
from .reports import config_hash, csv_table, ess_trace_csv, estimates_csv, weight_trace_csv
from .resampling import ResamplingConfig
from .systems import (
    LinearGaussianSystem,
    LorenzBlowUpError,
    LorenzSystem,
    Scenario,
    make_scenario,
    read_scenario_csv,
    write_scenario_csv,
)

__all__ = ["ConfigError", "ExperimentConfig", "main", "parse_config_text", "run_experiment", "validate_config"]

OUTPUT_DIR_ENV = "SURGE_OUTPUT_DIR"

SYSTEMS = ("linear_gaussian", "lorenz63")
METHODS = ("surge", "bpf", "enkf", "kalman", "guided_unweighted")
GUIDANCES = ("likelihood", "doob", "zero")

# per-system defaults; Lorenz values follow the published hyperparameter table
SYSTEM_DEFAULTS = {
    "linear_gaussian": {"n": 512, "k": 32, "t": 20, "threshold": 0.75},
    "lorenz63": {"n": 3, "k": 600, "t": 15, "threshold": 0.75},
}
BASELINE_N = {"lorenz63": 20}

KEYS = (
    "system", "method", "n", "k", "t", "seed", "scenario_seed", "lambda", "guidance",
    "scheme", "threshold", "mode", "resample_every_k", "workers", "output_dir",
    "weight_trace", "scenario",
)


class ConfigError(ValueError):
    """Invalid experiment configuration; ``errors`` lists every violation."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    system: str
    method: str
    n: int
    k: int
    t: int
    seed: int
    scenario_seed: int
    lam: float
    guidance: str
    scheme: str
    threshold: float
    mode: str
    resample_every_k: bool
    workers: int = 1
    output_dir: str = "surge_out"
    weight_trace: bool = False
    scenario: str | None = None

    def hashed_fields(self) -> dict:
        """Fields that determine the numbers (not where or how fast they are produced)."""
        d = asdict(self)
        for key in ("workers", "output_dir"):
            d.pop(key)
        return d

    @property
    def digest(self) -> str:
        return config_hash(self.hashed_fields())


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are skipped."""
    raw: dict[str, str] = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key.replace("-", "_")] = value
    if errors:
        raise ConfigError(errors)
    return raw


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def validate_config(raw: str | Mapping[str, str]) -> ExperimentConfig:
    """Strict parse of a raw config; raises ``ConfigError`` listing every problem."""
    if isinstance(raw, str):
        raw = parse_config_text(raw)
    raw = {k.replace("-", "_"): str(v) for k, v in raw.items()}
    errors: list[str] = []
    for key in sorted(set(raw) - set(KEYS)):
        errors.append(f"unknown key {key!r}")

    def get(key, conv, default=None, check=None, why=""):
        if key not in raw:
            return default
        try:
            value = conv(raw[key])
        except ValueError:
            errors.append(f"{key}: cannot parse {raw[key]!r} as {conv.__name__}")
            return default
        if check is not None and not check(value):
            errors.append(f"{key}: {value!r} {why}")
            return default
        return value

    system = get("system", str, "linear_gaussian", lambda v: v in SYSTEMS, f"not in {SYSTEMS}")
    method = get("method", str, "surge", lambda v: v in METHODS, f"not in {METHODS}")
    defaults = SYSTEM_DEFAULTS[system]
    default_n = BASELINE_N.get(system, defaults["n"]) if method in ("bpf", "enkf") else defaults["n"]
    n = get("n", int, default_n, lambda v: v >= 1, "must be >= 1")
    k = get("k", int, defaults["k"], lambda v: v >= 1, "must be >= 1")
    t = get("t", int, defaults["t"], lambda v: v >= 1, "must be >= 1")
    if "seed" not in raw:
        errors.append("seed: missing (seeds are mandatory)")
    seed = get("seed", int, 0, lambda v: v >= 0, "must be >= 0")
    scenario_seed = get("scenario_seed", int, seed, lambda v: v >= 0, "must be >= 0")
    lam = get("lambda", float, 1.0, lambda v: math.isfinite(v) and v >= 0, "must be finite and >= 0")
    guidance = get("guidance", str, "likelihood", lambda v: v in GUIDANCES, f"not in {GUIDANCES}")
    scheme = get("scheme", str, "systematic", lambda v: v in ("multinomial", "systematic"),
                 "not in ('multinomial', 'systematic')")
    threshold = get("threshold", float, defaults["threshold"], lambda v: 0.0 < v <= 1.0, "must lie in (0, 1]")
    mode = get("mode", str, "incremental", lambda v: v in ("incremental", "whole_step"),
               "not in ('incremental', 'whole_step')")
    every_k = get("resample_every_k", _parse_bool, True)
    workers = get("workers", int, 1, lambda v: v >= 1, "must be >= 1")
    output_dir = get("output_dir", str, os.environ.get(OUTPUT_DIR_ENV, "surge_out"))
    weight_trace = get("weight_trace", _parse_bool, False)
    scenario = get("scenario", str, None)

    if method == "kalman" and system != "linear_gaussian":
        errors.append("method 'kalman' requires system 'linear_gaussian'")
    if guidance == "doob" and system != "linear_gaussian":
        errors.append("guidance 'doob' requires system 'linear_gaussian'")
    if method == "enkf" and n is not None and n < 2:
        errors.append("n: enkf needs at least 2 members")
    if weight_trace and method not in ("surge",):
        errors.append("weight_trace is only available for method 'surge'")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        system=system, method=method, n=n, k=k, t=t, seed=seed, scenario_seed=scenario_seed,
        lam=lam, guidance=guidance, scheme=scheme, threshold=threshold, mode=mode,
        resample_every_k=every_k, workers=workers, output_dir=output_dir,
        weight_trace=weight_trace, scenario=scenario,
    )


def build_system(name: str):
    return LinearGaussianSystem() if name == "linear_gaussian" else LorenzSystem()


def _gaussian_point_w1(mean: np.ndarray, var: np.ndarray, point: np.ndarray) -> float:
    """Mean over coordinates of ``E|X - point|`` for ``X ~ N(mean, var)``."""
    sd = np.sqrt(var)
    d = np.abs(point - mean)
    return float(np.mean(sd * np.sqrt(2 / np.pi) * np.exp(-0.5 * (d / sd) ** 2) + d * (1 - 2 * norm.cdf(-d / sd))))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    scenario: Scenario
    means: np.ndarray
    metrics: dict
    output: FilterOutput | None = None
    files: dict[str, str] = field(default_factory=dict)


def load_scenario(config: ExperimentConfig, system) -> Scenario:
    if config.scenario is None:
        return make_scenario(system, None, config.t, config.scenario_seed)
    sc = read_scenario_csv(Path(config.scenario).read_text())
    if sc.system.get("name") != config.system:
        raise ConfigError([f"scenario file is for system {sc.system.get('name')!r}, config says {config.system!r}"])
    if sc.observations.shape[0] < config.t:
        raise ConfigError([f"scenario has {sc.observations.shape[0]} observations, t={config.t} requested"])
    return Scenario(sc.true_trajectory[: config.t + 1], sc.observations[: config.t], sc.system, sc.seed)


def _guidance(config: ExperimentConfig, system):
    if config.guidance == "zero" or config.lam == 0:
        return zero_guidance()
    if config.guidance == "doob":
        A, Q, H, *_ = system.arrays()
        return exact_doob_guidance(A, Q, H, system.R_cov)
    return likelihood_gradient_guidance(system.observation_model(), system.surrogate(), config.lam)


def execute(config: ExperimentConfig) -> ExperimentResult:
    """Run one configured experiment in memory."""
    system = build_system(config.system)
    scenario = load_scenario(config, system)
    truth = scenario.true_trajectory[1:]
    obs = scenario.observations
    model = system.observation_model()
    surrogate = system.surrogate()

    if config.method == "kalman":
        A, Q, H, m0, P0 = system.arrays()
        states = kalman_filter(A, Q, H, system.R_cov, obs, KalmanState(m0, P0))
        means = np.array([s.mean for s in states])
        w1 = np.mean([_gaussian_point_w1(s.mean, np.diag(s.cov), x) for s, x in zip(states, truth)])
        metrics = {"rmse": rmse(means, truth), "w1": float(w1), "ess_mean": float("nan"),
                   "ess_min": float("nan"), "log_evidence": float(sum(s.log_marginal for s in states))}
        return ExperimentResult(config, scenario, means, metrics)

    init = system.init_ensemble(config.seed, config.n, law_seed=scenario.seed)
    resampling = ResamplingConfig(config.scheme, config.threshold)
    if config.method in ("surge", "guided_unweighted"):
        fc = FilterConfig(
            n_particles=config.n, n_steps=config.k, seed=config.seed, resampling=resampling,
            guidance=_guidance(config, system), mode=config.mode,
            resample_every_k=config.resample_every_k, reweight=config.method == "surge",
            record_weights=config.weight_trace, workers=config.workers,
        )
        output = surge_filter(surrogate, model, obs, init, fc)
    else:
        sampler = bridge_sampler(surrogate, config.k, config.seed, workers=config.workers)
        if config.method == "bpf":
            output = bootstrap_pf(sampler, model, obs, init, resampling, seed=config.seed)
        else:
            output = enkf(sampler, model, obs, init, seed=config.seed)
    report = metric_report(output, truth)
    metrics = {"rmse": report.rmse, "w1": report.w1, "ess_mean": report.ess_mean,
               "ess_min": report.ess_min, "log_evidence": float(np.sum(output.log_evidence))}
    return ExperimentResult(config, scenario, output.means, metrics, output)


def render(result: ExperimentResult) -> dict[str, str]:
    """File name to CSV text for one experiment."""
    cfg = result.config
    digest = cfg.digest
    metric_row = [cfg.method, cfg.system, cfg.n, cfg.k, cfg.t, *result.metrics.values()]
    files = {
        "metrics.csv": csv_table(
            ("method", "system", "n", "k", "t", *result.metrics.keys()), [metric_row], digest
        ),
        "estimates.csv": estimates_csv(result.means, result.scenario.true_trajectory[1:], digest),
    }
    if result.output is not None:
        files["ess_trace.csv"] = ess_trace_csv(result.output.ess_trace, digest)
        if result.output.weight_trace is not None:
            files["weight_trace.csv"] = weight_trace_csv(result.output.weight_trace, digest)
    return files


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute ``config`` and write its CSV files into ``config.output_dir``."""
    result = execute(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in render(result).items():
        path = out / name
        path.write_text(text)
        result.files[name] = str(path)
    return result


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--system", choices=SYSTEMS)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--n", help="number of particles")
    p.add_argument("--k", help="internal Euler-Maruyama steps per window")
    p.add_argument("--t", help="number of observation times")
    p.add_argument("--seed")
    p.add_argument("--scenario-seed")
    p.add_argument("--lambda", dest="lambda_", metavar="LAMBDA", help="guidance strength")
    p.add_argument("--guidance", choices=GUIDANCES)
    p.add_argument("--scheme", choices=("multinomial", "systematic"))
    p.add_argument("--threshold", help="ESS resampling threshold as a fraction of N")
    p.add_argument("--mode", choices=("incremental", "whole_step"))
    p.add_argument("--resample-every-k", choices=("true", "false"))
    p.add_argument("--workers")
    p.add_argument("--output-dir", help=f"output directory (env {OUTPUT_DIR_ENV}; default surge_out)")
    p.add_argument("--weight-trace", action="store_const", const="true")
    p.add_argument("--scenario", help="scenario CSV written by generate-scenario")


def _raw_from_args(args: argparse.Namespace) -> dict[str, str]:
    raw = parse_config_text(args.config.read_text()) if args.config else {}
    if OUTPUT_DIR_ENV in os.environ:
        raw["output_dir"] = os.environ[OUTPUT_DIR_ENV]
    flags = vars(args).copy()
    flags["lambda"] = flags.pop("lambda_", None)
    for key in KEYS:
        if flags.get(key) is not None:
            raw[key] = str(flags[key])
    return raw


def _cmd_run(args) -> int:
    config = validate_config(_raw_from_args(args))
    try:
        result = run_experiment(config)
    except WeightCollapseError as exc:
        print(f"error: weight collapse at t={exc.t}, k={exc.k}", file=sys.stderr)
        return 3
    m = result.metrics
    print(f"{config.method}: rmse={m['rmse']:.6g} w1={m['w1']:.6g} mean_ess={m['ess_mean']:.4g}")
    return 0


def _cmd_generate(args) -> int:
    raw = _raw_from_args(args)
    raw.setdefault("method", "kalman" if raw.get("system", "linear_gaussian") == "linear_gaussian" else "surge")
    config = validate_config(raw)
    system = build_system(config.system)
    scenario = make_scenario(system, None, config.t, config.scenario_seed)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "scenario.csv"
    digest = config_hash({"system": system.descriptor(), "t": config.t, "seed": config.scenario_seed})
    path.write_text(write_scenario_csv(scenario) + f"# config_sha256={digest}\n")
    print(f"wrote {path}")
    return 0


def _cmd_compare(args) -> int:
    from .acceptance import run_suite

    only = [int(c) for c in args.only.split(",")] if args.only else None
    results = run_suite(only=only, workers=args.workers)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one filter experiment and write CSV reports")
    _add_run_flags(run)
    run.set_defaults(func=_cmd_run)
    gen = sub.add_parser("generate-scenario", help="write a ground-truth trajectory and observations")
    _add_run_flags(gen)
    gen.set_defaults(func=_cmd_generate)
    cmp_ = sub.add_parser("compare", help="run a comparison suite")
    cmp_.add_argument("--suite", choices=("acceptance",), required=True)
    cmp_.add_argument("--only", help="comma-separated criterion numbers")
    cmp_.add_argument("--workers", type=int, default=4, help="thread count for the determinism check")
    cmp_.set_defaults(func=_cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LorenzBlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
