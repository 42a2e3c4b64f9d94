"""
Pulse profiles

A pulse of type λ is a nonnegative transient F(τ) that switches on at τ = -b,
rises and then decays exponentially. Two families are built in

    GammaExp    F = C e^{-a e} (1 - e^{-d e})
    PureExp     F = C e^{-a e}

with e = τ + b the time elapsed since onset. Besides evaluation this module
solves the level-crossing problem, giving the level duration Δτ(F), the total
time a pulse spends at or above the level F.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass
from enum import Enum

import torch
from scipy.optimize import brentq
from torch import Tensor

from shot_noise_pytorch.utils import DTYPE, DomainError, as_tensor, is_tensor

# constants

BISECT_ITERS = 64  # halves any bracket below double precision
BRENTQ_RTOL = 4 * torch.finfo(DTYPE).eps
BRENTQ_XTOL = 1e-30

Peak = namedtuple("Peak", ["tau_peak", "F_peak"])
Support = namedtuple("Support", ["t_lo", "t_hi"])
Crossings = namedtuple("Crossings", ["t_left", "t_right"])
ShapeParams = namedtuple("ShapeParams", ["C", "a", "d", "b", "rising"])


class Family(str, Enum):
    GAMMA_EXP = "gamma_exp"
    PURE_EXP = "pure_exp"


@dataclass(frozen=True)
class PulseShape:
    """Parametric pulse profile.

    Attributes
    ----------
    family: Family
        GAMMA_EXP rises as (1 - e^{-d e}) before decaying, PURE_EXP starts at its peak.
    C: float
        amplitude scale.
    a: float
        decay rate, sets the exponential tail C e^{-a e}.
    d: float | None
        rise rate, GAMMA_EXP only.
    b: float
        onset, the pulse starts at τ = -b.
    """

    family: Family
    C: float
    a: float
    d: float | None = None
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))

        if not self.C > 0:
            raise DomainError(f"C must be positive, got {self.C}")
        if not self.a > 0:
            raise DomainError(f"a must be positive, got {self.a}")
        if not self.b >= 0:
            raise DomainError(f"b must be nonnegative, got {self.b}")

        if self.family == Family.GAMMA_EXP:
            if self.d is None or not self.d > 0:
                raise DomainError(f"d must be positive for gamma_exp, got {self.d}")
        elif self.d is not None:
            raise DomainError("d is only defined for gamma_exp pulses")

    @classmethod
    def gamma_exp(cls, C, a, d, b=0.0):
        return cls(Family.GAMMA_EXP, float(C), float(a), float(d), float(b))

    @classmethod
    def pure_exp(cls, C, a, b=0.0):
        return cls(Family.PURE_EXP, float(C), float(a), None, float(b))

    @property
    def rising(self) -> bool:
        return self.family == Family.GAMMA_EXP

    def params(self) -> ShapeParams:
        return ShapeParams(self.C, self.a, self.d or 0.0, self.b, self.rising)


def stack_shapes(shapes: list[PulseShape]) -> ShapeParams:
    """Parameters of several shapes as (m,) tensors, for batched evaluation."""
    C, a, d, b, rising = zip(*(shape.params() for shape in shapes))
    return ShapeParams(
        as_tensor(C),
        as_tensor(a),
        as_tensor(d),
        as_tensor(b),
        torch.tensor(rising, dtype=torch.bool),
    )


# evaluation


def profile(elapsed: Tensor, C, a, d, rising) -> Tensor:
    """Pulse value at the given time since onset, parameters broadcast against it."""
    e = elapsed.clamp(min=0.0)
    decay = C * torch.exp(-a * e)
    rise = -torch.expm1(-d * e)
    out = torch.where(torch.as_tensor(rising), decay * rise, decay)
    return out.masked_fill(elapsed < 0, 0.0)


def _value(shape: PulseShape, elapsed: float) -> float:
    if elapsed < 0:
        return 0.0

    decay = shape.C * math.exp(-shape.a * elapsed)
    if not shape.rising:
        return decay

    return decay * -math.expm1(-shape.d * elapsed)


def eval_pulse(shape: PulseShape, tau):
    """F(τ); zero before onset."""
    if not is_tensor(tau):
        return _value(shape, float(tau) + shape.b)

    C, a, d, b, rising = shape.params()
    return profile(as_tensor(tau) + b, C, a, d, rising)


def peak(shape: PulseShape) -> Peak:
    if not shape.rising:
        return Peak(-shape.b, shape.C)

    elapsed = math.log1p(shape.d / shape.a) / shape.d
    return Peak(elapsed - shape.b, _value(shape, elapsed))


def tail_duration(shape: PulseShape, F):
    """Asymptotic level duration (1/a) ln(C/F) of the exponential tail."""
    if is_tensor(F):
        return (shape.C / as_tensor(F)).log() / shape.a

    return math.log(shape.C / F) / shape.a


# level crossings


def _bisect(increasing_fn, lo: Tensor, hi: Tensor, num_iters=BISECT_ITERS) -> Tensor:
    for _ in range(num_iters):
        mid = (lo + hi) / 2
        above = increasing_fn(mid) >= 0
        hi = torch.where(above, mid, hi)
        lo = torch.where(above, lo, mid)

    return (lo + hi) / 2


def _falling_bracket(shape: PulseShape, tail, e_peak: float):
    # F <= level / 2 one halving time past the tail time
    pad = math.log(2) / shape.a

    if is_tensor(tail):
        return tail.clamp(min=e_peak) + pad

    return max(tail, e_peak) + pad


def _crossings_scalar(shape: PulseShape, level: float) -> Crossings:
    tau_peak, F_peak = peak(shape)
    onset = -shape.b

    if level <= 0:
        return Crossings(onset, math.inf)

    if level >= F_peak:
        return Crossings(tau_peak, tau_peak)

    if not shape.rising:
        return Crossings(onset, tail_duration(shape, level) + onset)

    e_peak = tau_peak + shape.b
    e_max = _falling_bracket(shape, tail_duration(shape, level), e_peak)

    def fn(e):
        return _value(shape, e) - level

    e_left = brentq(fn, 0.0, e_peak, xtol=BRENTQ_XTOL, rtol=BRENTQ_RTOL)
    e_right = brentq(fn, e_peak, e_max, xtol=BRENTQ_XTOL, rtol=BRENTQ_RTOL)
    return Crossings(e_left + onset, e_right + onset)


def _crossings_batched(shape: PulseShape, level: Tensor) -> Crossings:
    tau_peak, F_peak = peak(shape)
    onset = -shape.b
    level = as_tensor(level)

    nonpositive = level <= 0
    above_peak = level >= F_peak
    inside = ~(nonpositive | above_peak)

    safe = torch.where(inside, level, level.new_full((), F_peak / 2))
    e_peak = tau_peak + shape.b

    if not shape.rising:
        e_left = torch.zeros_like(safe)
        e_right = tail_duration(shape, safe)
    else:
        C, a, d, _, rising = shape.params()

        def value(e):
            return profile(e, C, a, d, rising)

        e_max = _falling_bracket(shape, tail_duration(shape, safe), e_peak)
        e_left = _bisect(
            lambda e: value(e) - safe, torch.zeros_like(safe), torch.full_like(safe, e_peak)
        )
        e_right = _bisect(lambda e: safe - value(e), torch.full_like(safe, e_peak), e_max)

    t_left = torch.where(inside, e_left + onset, level.new_full((), tau_peak))
    t_right = torch.where(inside, e_right + onset, level.new_full((), tau_peak))

    t_left = t_left.masked_fill(nonpositive, onset)
    t_right = t_right.masked_fill(nonpositive, math.inf)
    return Crossings(t_left, t_right)


def crossing_times(shape: PulseShape, F) -> Crossings:
    """Times where the pulse crosses level F on its rising and falling branch.

    Both equal the peak time when F is at or above the peak. For F <= 0 the
    whole half line from onset is above the level and t_right is infinite.
    Tensors are solved by vectorized bisection, scalars by Brent's method.
    """
    if is_tensor(F):
        return _crossings_batched(shape, F)

    return _crossings_scalar(shape, float(F))


def level_duration(shape: PulseShape, F):
    """Δτ(F), the measure of {τ : F(τ) >= F}."""
    if is_tensor(F):
        F = as_tensor(F)
        if (F <= 0).any():
            raise DomainError("level must be positive")
    elif not F > 0:
        raise DomainError("level must be positive")

    if not shape.rising:
        duration = tail_duration(shape, F)
        return duration.clamp(min=0.0) if is_tensor(duration) else max(duration, 0.0)

    t_left, t_right = crossing_times(shape, F)
    return t_right - t_left


def effective_support(shape: PulseShape, eps: float) -> Support:
    """[onset, t_hi] outside of which F < eps; t_hi lies on the decaying branch."""
    _, F_peak = peak(shape)

    if not 0 < eps < F_peak:
        raise DomainError(
            f"truncation level above peak (eps={eps:g}, peak={F_peak:g})"
            if eps >= F_peak
            else f"truncation level must be positive, got {eps:g}"
        )

    _, t_hi = crossing_times(shape, eps)
    return Support(-shape.b, t_hi)


# moments


def _moment_terms(shape: PulseShape, order: int):
    """F^n expanded as a sum of exponentials c_k e^{-r_k e}."""
    if not shape.rising:
        return [(shape.C**order, order * shape.a)]

    return [
        (
            shape.C**order * math.comb(order, k) * (-1) ** k,
            order * shape.a + k * shape.d,
        )
        for k in range(order + 1)
    ]


def moment_upto(shape: PulseShape, order: int, tau: Tensor) -> Tensor:
    """∫ F^order from onset up to each τ in the tensor, closed form."""
    elapsed = (as_tensor(tau) + shape.b).clamp(min=0.0)

    out = torch.zeros_like(elapsed)
    for coef, rate in _moment_terms(shape, order):
        out = out + coef * -torch.expm1(-rate * elapsed) / rate

    return out


def pulse_moment(shape: PulseShape, order: int = 1, upper: float | None = None) -> float:
    """∫ F(τ)^order dτ from onset to `upper`, the whole pulse when None."""
    assert order >= 1, "moment order must be a positive integer"

    if upper is None:
        return sum(coef / rate for coef, rate in _moment_terms(shape, order))

    return moment_upto(shape, order, as_tensor(upper)).item()
