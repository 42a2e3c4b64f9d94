from __future__ import annotations

import logging

import numpy as np
import torch
from torch import Tensor

DTYPE = torch.float64

# errors


class ShotNoiseError(Exception):
    pass


class DomainError(ShotNoiseError, ValueError):
    """An operation was called outside its precondition."""


class BelowThresholdError(DomainError):
    pass


class ConfigError(ShotNoiseError, ValueError):
    pass


class NumericalError(ShotNoiseError, RuntimeError):
    pass


# helpers


def exists(val):
    return val is not None


def default(val, d):
    return val if exists(val) else d


def is_tensor(t):
    return isinstance(t, Tensor)


def as_tensor(t) -> Tensor:
    return torch.as_tensor(t, dtype=DTYPE)


# seeding


def derive_seed(seed: int, *counter: int) -> int:
    """Counter-based child seed, a pure function of (seed, counter)."""
    state = np.random.SeedSequence(seed, spawn_key=counter).generate_state(
        2, dtype=np.uint32
    )
    return (int(state[0]) << 31) ^ int(state[1])


def seeded_generator(seed: int, *counter: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *counter))
    return generator


def sample_multinomial(
    total_count: int, probs: Tensor, num_samples: int, generator=None
) -> Tensor:
    """Multinomial counts as a chain of conditional binomials, one row per sample."""
    probs = probs.to(DTYPE).cpu()

    remaining = probs.new_full((num_samples,), float(total_count))
    remainder = probs.new_ones(())
    sample = torch.empty(num_samples, len(probs), dtype=DTYPE)

    last = len(probs) - 1

    for i, p in enumerate(probs):
        if i == last:
            sample[:, i] = remaining
            remaining = remaining - remaining
            break

        prob = (p / remainder).clamp(0.0, 1.0) if remainder > 0 else p.new_zeros(())
        s = torch.binomial(
            remaining, prob.expand(num_samples).contiguous(), generator=generator
        )
        sample[:, i] = s
        remaining = remaining - s
        remainder = remainder - p

    assert (remaining == 0).all(), "invalid total count after multinomial draw"

    return sample.long()


# logging


def setup_logging(verbosity: int = 0):
    from rich.console import Console
    from rich.logging import RichHandler

    level = {-1: logging.WARNING, 0: logging.INFO}.get(verbosity, logging.DEBUG)

    handler = RichHandler(
        console=Console(stderr=True), show_path=False, rich_tracebacks=False
    )
    handler.setFormatter(logging.Formatter("%(message)s"))

    root = logging.getLogger("shot_noise_pytorch")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
    return root
