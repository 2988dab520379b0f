"""Sequential Monte Carlo for diffusion-surrogate transitions with Girsanov-corrected weights."""

from .baselines import KalmanState, bootstrap_pf, bridge_sampler, enkf, kalman_filter
from .core import Ensemble, RngStream, WeightCollapseError, gaussian_draw, normalize_log_weights
from .filter import FilterConfig, FilterOutput, posterior_estimate, surge_filter
from .guidance import GuidancePotential, exact_doob_guidance, likelihood_gradient_guidance, zero_guidance
from .metrics import MetricReport, ess_stats, metric_report, rmse, wasserstein1_1d
from .observation import ObservationModel, grad_log_likelihood, log_likelihood, make_arctan_partial_model, make_linear_model
from .propagation import PathStepRecord, em_step, propagate_window
from .resampling import ResamplingConfig, effective_sample_size, maybe_resample, resample
from .surrogate import (
    GaussianBridgeSurrogate,
    LorenzParams,
    TransitionSurrogate,
    make_linear_gaussian_surrogate,
    make_lorenz_surrogate,
)
from .systems import LinearGaussianSystem, LorenzSystem, Scenario, make_scenario, simulate_lorenz
from .weights import WeightLedger, incremental_log_weight, whole_step_log_weight

__version__ = "0.1.0"
