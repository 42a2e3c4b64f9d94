"""
Amplitude density from the convolution equation

    A ρ(A) = ∫₀^A Q(F) ρ(A - F) dF

Near A = 0 the kernel is the constant Q = Σ q/a and the solution is the power
law ρ = K A^{Q-1}, so the cumulative law is G(x) = p0 + K x^Q / Q there. The
solver seeds that head and marches the equation forward on cell masses,
P_j ≈ h ρ(j h), with the kernel taken as exact cell integrals of Q.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from scipy.integrate import cumulative_trapezoid
from torch import Tensor

from shot_noise_pytorch.process import ProcessConfig, campbell_moments, zero_atom
from shot_noise_pytorch.transform import kernel_cell_masses, q_constant
from shot_noise_pytorch.utils import (
    DTYPE,
    DomainError,
    NumericalError,
    as_tensor,
    default,
    is_tensor,
)

logger = logging.getLogger(__name__)

# constants

MIN_SEED_NODES = 10
MIN_GRID_NODES = 1000
TAIL_FRACTION = 0.1  # share of the grid, at its upper end, checked for leftover mass
TAIL_TOLERANCE = 1e-4
RESIDUAL_FLOOR = 1e-12

DICKMAN_SUPPORT = 30.0

# helpers


def seed_nodes(Q: float) -> int:
    """Seeded head nodes, enough to keep the implicit diagonal A_j - 3 W_0 / 4 positive."""
    return max(MIN_SEED_NODES, math.ceil(Q) + 1)


def cell_edges(h: float, num_nodes: int) -> Tensor:
    """Edges 0, h/2, 3h/2, ... of the cells centred on nodes 0 .. num_nodes - 1."""
    edges = (torch.arange(num_nodes, dtype=DTYPE) + 0.5) * h
    return torch.cat((edges.new_zeros(1), edges))


def head_masses(K: float, Q: float, h: float, num_cells: int) -> Tensor:
    """Exact masses of K A^{Q-1} over the first `num_cells` cells."""
    edges = cell_edges(h, num_cells)
    return K * edges.pow(Q).diff() / Q


def _march(W: Tensor, P: Tensor, h: float, start: int) -> Tensor:
    """Fill P[start:] from the discrete equation, in place.

    A_j P_j = Σ_{k>=1} W_k P_{j-k} + W_0 (3 P_j + P_{j-1}) / 4, the last term
    being the half cell at F = 0, which sees ρ on [A_j - h/2, A_j] only.
    """
    N = P.numel() - 1
    W_rev = W.flip(0)
    W0 = W[0].item()

    for j in range(start, N + 1):
        conv = torch.dot(P[:j], W_rev[N - j : N]) + 0.25 * W0 * P[j - 1]
        P[j] = conv / (j * h - 0.75 * W0)

    return P


def _discrete_operator(W: Tensor, P: Tensor, nodes: Tensor) -> Tensor:
    """Right hand side of the discrete equation at the given node indices."""
    N = P.numel() - 1
    W_rev = W.flip(0)
    W0 = W[0]

    out = torch.empty(nodes.numel(), dtype=P.dtype)

    for i, j in enumerate(nodes.tolist()):
        conv = torch.dot(P[:j], W_rev[N - j : N])
        out[i] = conv + W0 * (3 * P[j] + P[j - 1]) / 4

    return out


# solved grid


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """ρ(A) on the nodes A_j = j h, j = 1 .. N, with its power law head.

    Attributes
    ----------
    h: float
        grid step.
    A: Tensor
        nodes j h, j = 1 .. N.
    rho: Tensor
        density at the nodes, the head K A^{Q-1} on the seeded ones.
    G: Tensor
        cumulative law at the nodes, atom included.
    Q: float
        head exponent, Σ q/a.
    K: float
        head coefficient after normalization.
    p0: float
        zero atom of the truncated process.
    n_seed: int
        number of seeded nodes, the head covers (0, n_seed h].
    """

    h: float
    A: Tensor
    rho: Tensor
    G: Tensor
    Q: float
    K: float
    p0: float
    n_seed: int

    def __post_init__(self):
        assert self.A.shape == self.rho.shape == self.G.shape, "grid arrays differ in length"
        assert self.n_seed < self.A.numel(), "grid shorter than its seeded head"

    @property
    def A_seed(self) -> float:
        return self.n_seed * self.h

    @property
    def A_max(self) -> float:
        return self.A[-1].item()

    def __len__(self):
        return self.A.numel()

    def total_mass(self) -> float:
        """p0 + head integral + trapezoid of ρ over [A_seed, A_max]."""
        head = self.K * self.A_seed**self.Q / self.Q
        body = torch.trapezoid(self.rho[self.n_seed - 1 :], dx=self.h).item()
        return self.p0 + head + body

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(dict(A=self.A.numpy(), rho=self.rho.numpy(), G=self.G.numpy()))

    def to_csv(self, path):
        self.to_frame().to_csv(Path(path), index=False)


def default_density_range(config: ProcessConfig) -> float:
    """An A_max that leaves the tail check comfortable for most configurations."""
    mean, variance = campbell_moments(config)
    return max(10 * mean, mean + 12 * math.sqrt(variance))


def solve_density(
    config: ProcessConfig, h: float | None = None, A_max: float | None = None
) -> DensityGrid:
    """March the density equation forward from its power law head.

    Parameters
    ----------
    config: ProcessConfig
        the process, its kernel Q(F) and zero atom.
    h: float
        grid step, at most A_max / 1000. Defaults to A_max / 10⁴.
    A_max: float
        upper end of the grid. Defaults to `default_density_range(config)`.
    """
    A_max = default(A_max, default_density_range(config))
    h = default(h, A_max / 10_000)

    if not (h > 0 and A_max > 0):
        raise DomainError("h and A_max must be positive")
    if not h <= A_max / MIN_GRID_NODES:
        raise DomainError(f"h must be at most A_max / {MIN_GRID_NODES}, got h={h:g}")

    Q = q_constant(config)
    p0 = zero_atom(config)

    N = math.ceil(A_max / h - 1e-9)
    n_seed = seed_nodes(Q)

    W = kernel_cell_masses(config, cell_edges(h, N + 1))

    # provisional K = 1, rescaled once the whole grid is known
    P = torch.zeros(N + 1, dtype=DTYPE)
    P[: n_seed + 1] = head_masses(1.0, Q, h, n_seed + 1)
    P = _march(W, P, h, n_seed + 1)

    A = h * torch.arange(1, N + 1, dtype=DTYPE)
    rho = P[1:] / h
    rho[:n_seed] = A[:n_seed].pow(Q - 1)

    if not torch.isfinite(rho).all():
        raise NumericalError("density march produced non-finite values, increase A_max")

    A_seed = n_seed * h
    head = A_seed**Q / Q
    body = torch.trapezoid(rho[n_seed - 1 :], dx=h).item()
    total = head + body

    tail_start = max(n_seed - 1, int((1 - TAIL_FRACTION) * N))
    tail = torch.trapezoid(rho[tail_start:], dx=h).item()

    if not (math.isfinite(total) and total > 0):
        raise NumericalError("density mass is not finite, increase A_max")
    if tail / total > TAIL_TOLERANCE:
        raise NumericalError(
            f"{tail / total:.2e} of the mass lies in the last tenth of the grid, increase A_max"
        )

    K = (1 - p0) / total
    rho = K * rho

    G = torch.empty_like(rho)
    G[:n_seed] = p0 + K * A[:n_seed].pow(Q) / Q
    G[n_seed - 1 :] = G[n_seed - 1] + torch.cat(
        (rho.new_zeros(1), torch.cumulative_trapezoid(rho[n_seed - 1 :], dx=h))
    )

    logger.info("solved density on %d nodes (h=%g, A_max=%g), Q=%.4f", N, h, N * h, Q)
    logger.debug("head coefficient K=%.6g, zero atom p0=%.3g", K, p0)

    return DensityGrid(h, A, rho, G, Q, K, p0, n_seed)


# cumulative law


def _mass_below(grid: DensityGrid, x: Tensor) -> Tensor:
    """∫₀^x ρ, exact on the head and trapezoidal beyond it."""
    shape = x.shape
    x = x.reshape(-1)

    head = grid.K * x.pow(grid.Q) / grid.Q

    A, rho = grid.A, grid.rho
    idx = torch.searchsorted(A, x, right=True) - 1
    idx = idx.clamp(min=grid.n_seed - 1, max=len(grid) - 2)

    dx = x - A[idx]
    slope = (rho[idx + 1] - rho[idx]) / grid.h
    body = (grid.G[idx] - grid.p0) + dx * (rho[idx] + 0.5 * slope * dx)

    return torch.where(x <= grid.A_seed, head, body).reshape(shape)


def cdf_from_density(grid: DensityGrid, x):
    """G(x) = p0 + ∫₀^x ρ for 0 <= x <= A_max."""
    scalar = not is_tensor(x)
    x = as_tensor(x)

    if (x < 0).any():
        raise DomainError("amplitude must be nonnegative")
    if (x > grid.A_max * (1 + 1e-12)).any():
        raise DomainError(f"x beyond the solved grid, A_max={grid.A_max:g}")

    G = (grid.p0 + _mass_below(grid, x.clamp(max=grid.A_max))).clamp(0.0, 1.0)
    return G.item() if scalar else G


# residual


def fine_cell_masses(grid: DensityGrid) -> Tensor:
    """Masses of the cells of the h/2 grid, split from the grid's own masses.

    A fine cell on a node is the middle half of its coarse cell, one between
    nodes takes a quarter of each neighbour. Fine cells inside the seeded head
    get exact head masses.
    """
    coarse = torch.cat(
        (
            head_masses(grid.K, grid.Q, grid.h, grid.n_seed + 1),
            grid.h * grid.rho[grid.n_seed :],
        )
    )

    fine = coarse.new_empty(2 * coarse.numel() - 1)
    fine[0::2] = coarse / 2
    fine[1::2] = (coarse[:-1] + coarse[1:]) / 4

    num_head = 2 * grid.n_seed + 1
    fine[:num_head] = head_masses(grid.K, grid.Q, grid.h / 2, num_head)
    return fine


def residual_profile(grid: DensityGrid, config: ProcessConfig) -> Tensor:
    """Relative defect of the continuous equation at every node.

    The equation is re-discretized at step h/2, with kernel masses on the
    finer cells and ρ carried over as `fine_cell_masses`. Seeded nodes
    report zero.
    """
    delta = grid.h / 2
    P = fine_cell_masses(grid)
    W = kernel_cell_masses(config, cell_edges(delta, P.numel()))

    nodes = 2 * torch.arange(grid.n_seed + 1, len(grid) + 1)
    rhs = _discrete_operator(W, P, nodes) / delta

    marched = slice(grid.n_seed, None)
    lhs = grid.A[marched] * grid.rho[marched]

    defect = torch.zeros_like(grid.rho)
    defect[marched] = (lhs - rhs).abs() / (lhs + RESIDUAL_FLOOR)
    return defect


def residual_check(grid: DensityGrid, config: ProcessConfig) -> float:
    """Largest relative defect over the marched nodes."""
    return residual_profile(grid, config).max().item()


# oracle


def _dickman_rho(step: float, support: float):
    per_unit = round(1 / step)
    assert per_unit >= 1 and abs(per_unit * step - 1) < 1e-9, "step must divide 1"

    u = np.arange(round(support * per_unit) + 1) / per_unit
    rho = np.ones_like(u)

    # method of steps, u ρ'(u) = -ρ(u - 1) integrated one unit at a time
    for k in range(1, math.ceil(support)):
        lo, hi = k * per_unit, min((k + 1) * per_unit, len(u) - 1)
        delayed = rho[lo - per_unit : hi - per_unit + 1] / u[lo : hi + 1]
        rho[lo : hi + 1] = rho[lo] - cumulative_trapezoid(delayed, u[lo : hi + 1], initial=0)

    return u, rho


def dickman_reference(x, step: float = 1e-4, support: float = DICKMAN_SUPPORT):
    """Normalized Dickman law P(A <= x), exponential shot noise with q = a.

    Computed independently of the solver by integrating the delay equation
    of the Dickman function and normalizing by its integral, e^γ.
    """
    u, rho = _dickman_rho(step, support)

    cdf = cumulative_trapezoid(rho, u, initial=0)
    cdf = cdf / cdf[-1]

    values = np.interp(np.asarray(as_tensor(x)), u, cdf, right=1.0)

    if is_tensor(x):
        return as_tensor(values)

    return float(values)
