"""Stein variational gradient descent with KSD/KL diagnostics and propagation-of-chaos experiments."""

from .chaos import CoupledRun, InitialLaw, chaos_bound, lipschitz_constant, run_coupled
from .core import (
    NonFiniteError,
    StepSizePlan,
    SvgdConfig,
    Trace,
    as_ensemble,
    plan_step_size,
    run,
    svgd_direction,
    svgd_step,
)
from .diagnostics import (
    fit_rate,
    kl_estimate_1d,
    ksd_squared,
    stein_kernel,
    verify_descent,
    wasserstein2_1d,
    wasserstein2_small,
)
from .kernels import Kernel, imq, kernel_bound, median_bandwidth, rbf
from .targets import GaussianMixture1D, gaussian_target, mixture_target

__all__ = [
    "CoupledRun",
    "GaussianMixture1D",
    "InitialLaw",
    "Kernel",
    "NonFiniteError",
    "StepSizePlan",
    "SvgdConfig",
    "Trace",
    "as_ensemble",
    "chaos_bound",
    "fit_rate",
    "gaussian_target",
    "imq",
    "kernel_bound",
    "kl_estimate_1d",
    "ksd_squared",
    "lipschitz_constant",
    "median_bandwidth",
    "mixture_target",
    "plan_step_size",
    "rbf",
    "run",
    "run_coupled",
    "stein_kernel",
    "svgd_direction",
    "svgd_step",
    "verify_descent",
    "wasserstein2_1d",
    "wasserstein2_small",
]

__version__ = "0.1.0"
