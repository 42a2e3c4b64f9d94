"""
Generating function of the observed amplitude

With τ(F) = Σ q Δτ(F) the rate-weighted level duration, the Laplace transform
of the amplitude law is

    w(α) = E e^{-αA} = exp ∫ (1 - e^{-αF}) τ'(F) dF

and Q(F) = -F τ'(F) is the kernel of the density equation. For exponential
tails Q(F) tends to the constant Σ q/a as F -> 0.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass

import torch
from scipy.integrate import quad
from torch import Tensor

from shot_noise_pytorch.process import ProcessConfig, SampleSet, truncation_level
from shot_noise_pytorch.shapes import (
    PulseShape,
    crossing_times,
    eval_pulse,
    level_duration,
    moment_upto,
    peak,
)
from shot_noise_pytorch.utils import DomainError, as_tensor, is_tensor

# constants

FD_STEP = 1e-6  # relative finite difference step on the level
QUAD_EPSABS = 1e-9
QUAD_LIMIT = 200

LaplaceEstimate = namedtuple("LaplaceEstimate", ["w_hat", "stderr"])

LaplaceRow = namedtuple(
    "LaplaceRow",
    ["alpha", "w_mc", "w_mc_stderr", "w_analytic", "abs_diff", "sigma_ratio"],
)


def _check_level(F):
    positive = (as_tensor(F) > 0).all() if is_tensor(F) else F > 0
    if not positive:
        raise DomainError("level must be positive")


# weighted duration and its kernel


def tau_weighted(config: ProcessConfig, F):
    """τ(F) = Σ q Δτ(F)."""
    _check_level(F)
    return sum(ptype.q * level_duration(ptype.shape, F) for ptype in config.types)


def _duration_slope_batched(shape: PulseShape, F: Tensor) -> Tensor:
    if not shape.rising:
        slope = -1.0 / (shape.a * F)
        return torch.where(F <= shape.C, slope, torch.zeros_like(F))

    F_peak = peak(shape).F_peak
    h = FD_STEP * F

    upper = level_duration(shape, F + h)
    centre = level_duration(shape, F)
    lower = level_duration(shape, F - h)

    central = (upper - lower) / (2 * h)
    backward = (centre - lower) / h

    slope = torch.where(F + h < F_peak, central, backward)
    return slope.masked_fill(F > F_peak, 0.0)


def _duration_slope_scalar(shape: PulseShape, F: float) -> float:
    if not shape.rising:
        return -1.0 / (shape.a * F) if F <= shape.C else 0.0

    F_peak = peak(shape).F_peak
    if F > F_peak:
        return 0.0

    h = FD_STEP * F
    lower = level_duration(shape, F - h)

    # one-sided from below at the kink where the level reaches the peak
    if F + h >= F_peak:
        return (level_duration(shape, F) - lower) / h

    return (level_duration(shape, F + h) - lower) / (2 * h)


def duration_slope(shape: PulseShape, F):
    """dΔτ/dF, analytic for PureExp and by finite differences for GammaExp."""
    if is_tensor(F):
        return _duration_slope_batched(shape, as_tensor(F))

    return _duration_slope_scalar(shape, float(F))


def q_kernel(config: ProcessConfig, F):
    """Q(F) = -F τ'(F)."""
    _check_level(F)
    F = as_tensor(F) if is_tensor(F) else float(F)
    return -F * sum(ptype.q * duration_slope(ptype.shape, F) for ptype in config.types)


def q_constant(config: ProcessConfig) -> float:
    """Q = Σ q/a, the small-level limit of the kernel."""
    return math.fsum(ptype.q / ptype.shape.a for ptype in config.types)


@dataclass(frozen=True)
class WeightedDuration:
    """τ(F) and Q(F) of a process, bound to its configuration."""

    config: ProcessConfig

    def __call__(self, F):
        return tau_weighted(self.config, F)

    def Q_of_F(self, F):
        return q_kernel(self.config, F)

    @property
    def Q_const(self) -> float:
        return q_constant(self.config)


# exact kernel masses


def superlevel_mass(shape: PulseShape, level: Tensor) -> Tensor:
    """∫ F(τ) over {τ : F(τ) >= level}, closed form from the crossing times."""
    t_left, t_right = crossing_times(shape, as_tensor(level))
    return moment_upto(shape, 1, t_right) - moment_upto(shape, 1, t_left)


def kernel_cell_masses(config: ProcessConfig, edges: Tensor) -> Tensor:
    """∫ Q(F) dF over each interval between consecutive edges.

    Uses ∫ g(F) (-Δτ'(F)) dF = ∫ g(F(τ)) dτ with g(F) = F 1{lo <= F < hi}, so
    the masses stay finite where Q itself is singular, at GammaExp peak levels.
    """
    edges = as_tensor(edges)
    assert (edges[1:] >= edges[:-1]).all(), "edges must be nondecreasing"

    masses = torch.zeros(edges.numel() - 1, dtype=edges.dtype)

    for ptype in config.types:
        above = superlevel_mass(ptype.shape, edges)
        masses = masses + ptype.q * (above[:-1] - above[1:])

    return masses.clamp(min=0.0)


# generating function


def laplace_exponent(config: ProcessConfig, alpha: float) -> float:
    """Σ q ∫ (1 - e^{-αF}) (-Δτ'(F)) dF over the truncated pulses, in level form.

    Integrated by parts against Δτ itself,

        g(L) Δτ(L) + ∫_L^{F_peak} g'(F) Δτ(F) dF,    g(F) = 1 - e^{-αF}

    with L the truncation level, so no derivative of the duration is needed.
    """
    exponent = 0.0

    for ptype in config.types:
        shape = ptype.shape
        level = truncation_level(ptype, config.eps)
        F_peak = peak(shape).F_peak

        # F = e^u spreads the decades of small levels evenly
        def integrand(u, shape=shape):
            F = math.exp(u)
            return alpha * math.exp(-alpha * F) * level_duration(shape, F) * F

        above, _ = quad(
            integrand,
            math.log(level),
            math.log(F_peak),
            epsabs=QUAD_EPSABS,
            limit=QUAD_LIMIT,
        )
        above += -math.expm1(-alpha * level) * level_duration(shape, level)

        # rising branch below the truncation level, still inside the support
        onset = -shape.b
        t_left = crossing_times(shape, level).t_left
        below = 0.0

        if t_left > onset:
            below, _ = quad(
                lambda t, shape=shape: -math.expm1(-alpha * eval_pulse(shape, t)),
                onset,
                t_left,
                epsabs=QUAD_EPSABS,
            )

        exponent += ptype.q * (above + below)

    return exponent


def analytic_laplace(config: ProcessConfig, alpha: float) -> float:
    """w(α) from the level-duration identity, cut off at the truncation level."""
    if not alpha >= 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")

    if alpha == 0:
        return 1.0

    return math.exp(-laplace_exponent(config, alpha))


def time_domain_laplace(config: ProcessConfig, alpha: float) -> float:
    """w(α) = exp Σ q ∫ (e^{-αF(τ)} - 1) dτ, integrated directly over each support."""
    if not alpha >= 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")

    exponent = 0.0

    for ptype, (t_lo, t_hi) in zip(config.types, config.supports):
        shape = ptype.shape
        tau_peak = peak(shape).tau_peak
        points = [tau_peak] if t_lo < tau_peak < t_hi else None

        value, _ = quad(
            lambda t, shape=shape: math.expm1(-alpha * eval_pulse(shape, t)),
            t_lo,
            t_hi,
            points=points,
            epsabs=QUAD_EPSABS,
            limit=QUAD_LIMIT,
        )
        exponent += ptype.q * value

    return math.exp(exponent)


def mc_laplace(samples: SampleSet, alpha: float) -> LaplaceEstimate:
    """Sample mean of e^{-αA} with its standard error."""
    if len(samples) == 0:
        raise DomainError("empty sample set")
    if not alpha >= 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")

    values = torch.exp(-alpha * samples.amplitudes)
    n = values.numel()

    stderr = values.std().item() / math.sqrt(n) if n > 1 else 0.0
    return LaplaceEstimate(values.mean().item(), stderr)


def laplace_table(
    samples: SampleSet, config: ProcessConfig, alphas=(0.1, 0.5, 1.0, 2.0, 5.0)
) -> list[LaplaceRow]:
    """Monte Carlo against analytic generating function, one row per alpha."""
    rows = []

    for alpha in alphas:
        w_mc, stderr = mc_laplace(samples, alpha)
        w_analytic = analytic_laplace(config, alpha)
        abs_diff = abs(w_mc - w_analytic)

        if stderr > 0:
            sigma_ratio = abs_diff / stderr
        else:
            sigma_ratio = 0.0 if abs_diff == 0 else math.inf

        rows.append(LaplaceRow(alpha, w_mc, stderr, w_analytic, abs_diff, sigma_ratio))

    return rows
