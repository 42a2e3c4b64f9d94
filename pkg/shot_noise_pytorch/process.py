"""
Superposed Poisson pulse process, observed at t = 0

Pulses of each type λ arrive as a Poisson stream of rate q. The observed
amplitude is the sum of every pulse still (or already) alive at the
observation instant. Two equivalent samplers are provided

    superposition   Poisson(2Tq) pulses placed uniformly on (-T, T), the literal construction
    covering        only the Poisson(qL) pulses whose truncated support covers t = 0
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
import torch
from einops import rearrange, reduce, repeat
from torch import Tensor

from shot_noise_pytorch.shapes import (
    PulseShape,
    Support,
    effective_support,
    eval_pulse,
    moment_upto,
    peak,
    profile,
    stack_shapes,
)
from shot_noise_pytorch.utils import (
    DTYPE,
    DomainError,
    as_tensor,
    default,
    exists,
    seeded_generator,
)

logger = logging.getLogger(__name__)

# constants

DEFAULT_EPS = 1e-8  # truncation level, relative to each pulse's peak
ZERO_ATOM_BOUND = 0.01
RUNS_PER_BLOCK = 4096
SAMPLERS = ("covering", "superposition")

Moments = namedtuple("Moments", ["mean", "variance"])

# configuration


@dataclass(frozen=True)
class PulseTypeConfig:
    """One pulse type and its arrival rate q.

    `horizon`, when given, truncates the pulse at that time instead of at the
    relative level eps of the process.
    """

    shape: PulseShape
    q: float
    horizon: float | None = None

    def __post_init__(self):
        if not self.q > 0:
            raise DomainError(f"q must be positive, got {self.q}")

        if exists(self.horizon) and not self.horizon > peak(self.shape).tau_peak:
            raise DomainError(
                f"horizon must lie beyond the pulse peak, got {self.horizon}"
            )


@dataclass(frozen=True)
class ProcessConfig:
    """The full model observed at t = 0.

    Attributes
    ----------
    types: tuple[PulseTypeConfig, ...]
        pulse types with their rates.
    half_window: float | None
        T, placements are drawn on (-T, T). Defaults to the smallest window
        holding every truncated pulse that can cover t = 0.
    eps: float
        truncation level relative to each pulse peak.
    seed: int
        master seed, 64 bit unsigned.
    sampler: str
        "covering" (fast) or "superposition" (literal construction).
    """

    types: tuple[PulseTypeConfig, ...]
    half_window: float | None = None
    eps: float = DEFAULT_EPS
    seed: int = 0
    sampler: str = "covering"
    supports: tuple[Support, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))

        if len(self.types) == 0:
            raise DomainError("at least one pulse type is required")
        if not 0 < self.eps < 1:
            raise DomainError(f"eps must lie in (0, 1), got {self.eps}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise DomainError(f"seed must be a 64 bit unsigned integer, got {self.seed}")
        if self.sampler not in SAMPLERS:
            raise DomainError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")

        supports = tuple(type_support(ptype, self.eps) for ptype in self.types)
        object.__setattr__(self, "supports", supports)

        bound = max(max(-t_lo, t_hi) for t_lo, t_hi in supports)

        if not exists(self.half_window):
            object.__setattr__(self, "half_window", math.nextafter(bound, math.inf))
        elif not self.half_window > bound:
            raise DomainError(
                f"T must exceed the longest pulse support {bound:g}, got {self.half_window}"
            )

        p0 = zero_atom(self)
        if p0 > ZERO_ATOM_BOUND:
            warnings.warn(
                f"zero-atom probability {p0:.3g} exceeds {ZERO_ATOM_BOUND}, lower eps",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def T(self) -> float:
        return self.half_window

    @property
    def shapes(self) -> list[PulseShape]:
        return [ptype.shape for ptype in self.types]

    @property
    def rates(self) -> Tensor:
        return as_tensor([ptype.q for ptype in self.types])

    def digest(self) -> str:
        payload = dict(
            types=[
                dict(
                    family=ptype.shape.family.value,
                    C=ptype.shape.C,
                    a=ptype.shape.a,
                    d=ptype.shape.d,
                    b=ptype.shape.b,
                    q=ptype.q,
                    horizon=ptype.horizon,
                )
                for ptype in self.types
            ],
            T=self.half_window,
            eps=self.eps,
            seed=self.seed,
            sampler=self.sampler,
        )
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def truncation_level(ptype: PulseTypeConfig, eps: float = DEFAULT_EPS) -> float:
    """Absolute level below which the decaying tail of this pulse type is dropped."""
    if exists(ptype.horizon):
        return eval_pulse(ptype.shape, ptype.horizon)

    return eps * peak(ptype.shape).F_peak


def type_support(ptype: PulseTypeConfig, eps: float = DEFAULT_EPS) -> Support:
    if exists(ptype.horizon):
        return Support(-ptype.shape.b, float(ptype.horizon))

    return effective_support(ptype.shape, truncation_level(ptype, eps))


def support_lengths(config: ProcessConfig) -> Tensor:
    return as_tensor([t_hi - t_lo for t_lo, t_hi in config.supports])


def zero_atom(config: ProcessConfig) -> float:
    """p0 = exp(-Σ q L), the chance that no truncated pulse covers t = 0."""
    return math.exp(-(config.rates * support_lengths(config)).sum().item())


def campbell_moments(config: ProcessConfig) -> Moments:
    """Mean Σ q ∫F and variance Σ q ∫F² of the amplitude, over the truncated supports."""
    mean = variance = 0.0

    for ptype, (_, t_hi) in zip(config.types, config.supports):
        upper = as_tensor(t_hi)
        mean += ptype.q * moment_upto(ptype.shape, 1, upper).item()
        variance += ptype.q * moment_upto(ptype.shape, 2, upper).item()

    return Moments(mean, variance)


# sampling


def sample_pulse_count(q: float, T: float, generator=None) -> int:
    """Number of type-λ pulses placed on (-T, T), Poisson with mean 2Tq."""
    if not (q > 0 and T > 0):
        raise DomainError("rate and half window must be positive")

    mean = torch.tensor(2 * T * q, dtype=DTYPE)
    return int(torch.poisson(mean, generator=generator).item())


def _placement_windows(config: ProcessConfig, sampler: str):
    supports = as_tensor(list(config.supports))
    t_lo, t_hi = supports.unbind(dim=-1)

    if sampler == "superposition":
        T = config.half_window
        lo, width = torch.full_like(t_lo, -T), torch.full_like(t_lo, 2 * T)
    else:
        lo, width = t_lo, t_hi - t_lo

    return lo, width, t_lo, t_hi


def sample_block(
    config: ProcessConfig, num_runs: int, generator=None, sampler: str | None = None
) -> Tensor:
    """Amplitudes at t = 0 for `num_runs` independent realisations."""
    sampler = default(sampler, config.sampler)
    assert sampler in SAMPLERS, f"unknown sampler {sampler}"

    lo, width, t_lo, t_hi = _placement_windows(config, sampler)
    C, a, d, b, rising = stack_shapes(config.shapes)

    means = repeat(config.rates * width, "m -> n m", n=num_runs)
    counts = torch.poisson(means, generator=generator)

    max_count = int(counts.max().item()) if counts.numel() > 0 else 0

    if max_count == 0:
        return torch.zeros(num_runs, dtype=DTYPE)

    uniform = torch.rand(
        (num_runs, len(config.types), max_count), generator=generator, dtype=DTYPE
    )

    per_type = lambda t: rearrange(t, "m -> 1 m 1")  # noqa: E731

    # elapsed time, at the observation instant, since each pulse's τ origin
    tau = per_type(lo) + uniform * per_type(width)

    placed = torch.arange(max_count) < rearrange(counts, "n m -> n m 1")
    covering = (tau >= per_type(t_lo)) & (tau <= per_type(t_hi))

    values = profile(
        tau + per_type(b), per_type(C), per_type(a), per_type(d), per_type(rising)
    )
    values = values.masked_fill(~(placed & covering), 0.0)

    return reduce(values, "n m k -> n", "sum")


def sample_amplitude(config: ProcessConfig, generator=None) -> float:
    return sample_block(config, 1, generator).item()


# sample sets


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Amplitudes of repeated steady-state observations, zeros kept inline."""

    amplitudes: Tensor
    n_zero: int
    config_digest: str = ""

    def __post_init__(self):
        assert self.amplitudes.ndim == 1, "amplitudes must be a flat tensor"

        if (self.amplitudes < 0).any():
            raise DomainError("amplitudes must be nonnegative")

        assert self.n_zero == int((self.amplitudes == 0).sum().item())

    @classmethod
    def from_amplitudes(cls, amplitudes, config_digest: str = "") -> SampleSet:
        amplitudes = as_tensor(amplitudes).flatten()
        n_zero = int((amplitudes == 0).sum().item())
        return cls(amplitudes, n_zero, config_digest)

    def __len__(self):
        return self.amplitudes.numel()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            dict(
                run_index=range(len(self)),
                amplitude=self.amplitudes.numpy(),
            )
        )

    def to_csv(self, path):
        self.to_frame().to_csv(Path(path), index=False)

    @classmethod
    def from_csv(cls, path, config_digest: str = "") -> SampleSet:
        try:
            frame = pd.read_csv(Path(path), float_precision="round_trip")
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
            raise DomainError(f"{path}: not a samples CSV ({err})") from err

        if list(frame.columns) != ["run_index", "amplitude"]:
            raise DomainError(f"{path}: expected columns run_index,amplitude")

        try:
            frame = frame.apply(pd.to_numeric)
        except ValueError as err:
            raise DomainError(f"{path}: non-numeric entry ({err})") from err

        frame = frame.sort_values("run_index", kind="stable")
        return cls.from_amplitudes(frame["amplitude"].to_numpy(), config_digest)


def simulate(
    config: ProcessConfig,
    n_runs: int,
    num_workers: int = 1,
    sampler: str | None = None,
) -> SampleSet:
    """`n_runs` independent draws of the amplitude at t = 0.

    Runs are grouped in fixed blocks of RUNS_PER_BLOCK consecutive indices and
    block k draws from a generator derived from (seed, k) only, so the result is
    bit-identical whatever the number of workers.
    """
    if not n_runs >= 1:
        raise DomainError(f"n_runs must be at least 1, got {n_runs}")

    starts = range(0, n_runs, RUNS_PER_BLOCK)

    def run_block(block):
        size = min(RUNS_PER_BLOCK, n_runs - starts[block])
        generator = seeded_generator(config.seed, block)
        amplitudes = sample_block(config, size, generator, sampler)
        logger.debug("block %d: %d runs", block, size)
        return amplitudes

    if num_workers > 1:
        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            blocks = list(pool.map(run_block, range(len(starts))))
    else:
        blocks = [run_block(block) for block in range(len(starts))]

    samples = SampleSet.from_amplitudes(torch.cat(blocks), config.digest())
    logger.info(
        "simulated %d runs (%s sampler), %d without any covering pulse",
        n_runs,
        default(sampler, config.sampler),
        samples.n_zero,
    )
    return samples
