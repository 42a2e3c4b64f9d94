from shot_noise_pytorch.config import RunConfig, load_config, parse_config
from shot_noise_pytorch.density import (
    DensityGrid,
    cdf_from_density,
    dickman_reference,
    residual_check,
    residual_profile,
    solve_density,
)
from shot_noise_pytorch.inference import (
    CensoredView,
    EmpiricalCDF,
    PowerLawFit,
    censor,
    default_fit_window,
    ecdf_curve,
    empirical_cdf,
    extrapolate,
    extrapolation_report,
    fit_power_law,
    linear_window,
    local_slopes,
)
from shot_noise_pytorch.process import (
    ProcessConfig,
    PulseTypeConfig,
    SampleSet,
    campbell_moments,
    sample_amplitude,
    sample_pulse_count,
    simulate,
    zero_atom,
)
from shot_noise_pytorch.shapes import (
    Family,
    PulseShape,
    crossing_times,
    effective_support,
    eval_pulse,
    level_duration,
    peak,
    pulse_moment,
)
from shot_noise_pytorch.transform import (
    analytic_laplace,
    kernel_cell_masses,
    mc_laplace,
    q_constant,
    q_kernel,
    tau_weighted,
    time_domain_laplace,
    WeightedDuration,
)
from shot_noise_pytorch.utils import (
    BelowThresholdError,
    ConfigError,
    DomainError,
    NumericalError,
    ShotNoiseError,
)

__all__ = [
    "RunConfig",
    "load_config",
    "parse_config",
    "DensityGrid",
    "cdf_from_density",
    "dickman_reference",
    "residual_check",
    "residual_profile",
    "solve_density",
    "CensoredView",
    "EmpiricalCDF",
    "PowerLawFit",
    "censor",
    "default_fit_window",
    "ecdf_curve",
    "empirical_cdf",
    "extrapolate",
    "extrapolation_report",
    "fit_power_law",
    "linear_window",
    "local_slopes",
    "ProcessConfig",
    "PulseTypeConfig",
    "SampleSet",
    "campbell_moments",
    "sample_amplitude",
    "sample_pulse_count",
    "simulate",
    "zero_atom",
    "Family",
    "PulseShape",
    "crossing_times",
    "effective_support",
    "eval_pulse",
    "level_duration",
    "peak",
    "pulse_moment",
    "analytic_laplace",
    "kernel_cell_masses",
    "mc_laplace",
    "q_constant",
    "q_kernel",
    "tau_weighted",
    "time_domain_laplace",
    "WeightedDuration",
    "BelowThresholdError",
    "ConfigError",
    "DomainError",
    "NumericalError",
    "ShotNoiseError",
]
