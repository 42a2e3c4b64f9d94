"""
Measurement side: null frequencies below a detection threshold

Only amplitudes A >= x0 are seen individually, but the fraction G(x) of runs
at or below x is observed for every x >= x0. In the low amplitude regime
ln G(x) = ln C + Q ln x, so a straight line through (ln x, ln G) above the
threshold extrapolates the null frequency below it.
"""

from __future__ import annotations

import logging
import math
from collections import namedtuple
from dataclasses import dataclass
from typing import NamedTuple

import pandas as pd
import torch
from einops import reduce
from torch import Tensor

from shot_noise_pytorch.process import SampleSet
from shot_noise_pytorch.utils import (
    DTYPE,
    BelowThresholdError,
    DomainError,
    as_tensor,
    default,
    exists,
    is_tensor,
    sample_multinomial,
    seeded_generator,
)

logger = logging.getLogger(__name__)

# constants

DEFAULT_GRID_POINTS = 25
MIN_GRID_POINTS = 5
DEFAULT_BOOTSTRAPS = 200
CONFIDENCE = 0.95
BOOTSTRAP_STREAM = 0xB007  # keeps bootstrap draws apart from the simulation blocks

FitPoints = namedtuple("FitPoints", ["ln_x", "ln_G"])
LocalSlopes = namedtuple("LocalSlopes", ["ln_x", "slope"])
LinearWindow = namedtuple("LinearWindow", ["ln_x_lo", "ln_x_hi", "slope", "width"])

REPORT_COLUMNS = ["x", "G_extrapolated", "G_true", "rel_err"]

# empirical law


@dataclass(frozen=True, eq=False)
class EmpiricalCDF:
    """G(x) = (n_zero + #{0 < A_i <= x}) / n_total, right continuous."""

    positives: Tensor
    n_total: int
    n_zero: int

    def __post_init__(self):
        assert self.n_total == self.positives.numel() + self.n_zero, "counts do not add up"
        assert (self.positives[1:] >= self.positives[:-1]).all(), "positives must be sorted"

    def __call__(self, x):
        scalar = not is_tensor(x)
        x = as_tensor(x).reshape(-1)

        below = torch.searchsorted(self.positives, x, right=True)
        G = (self.n_zero + below).to(DTYPE) / self.n_total
        G = G.masked_fill(x < 0, 0.0)

        return G.item() if scalar else G

    def counts_between(self, edges: Tensor) -> Tensor:
        """Run counts in (-inf, e_0], (e_0, e_1], ..., (e_last, inf)."""
        G = self(as_tensor(edges))
        cumulative = torch.cat((G, G.new_ones(1))) * self.n_total
        return cumulative.round().diff(prepend=cumulative.new_zeros(1))

    def quantile(self, p: float) -> float:
        """Quantile of the positive amplitudes."""
        if self.positives.numel() == 0:
            raise DomainError("no positive amplitudes")

        return torch.quantile(self.positives, p).item()


def empirical_cdf(samples: SampleSet) -> EmpiricalCDF:
    if len(samples) == 0:
        raise DomainError("empty sample set")

    amplitudes = samples.amplitudes
    positives = amplitudes[amplitudes > 0].sort().values
    return EmpiricalCDF(positives, len(samples), samples.n_zero)


@dataclass(frozen=True, eq=False)
class CensoredView:
    """An EmpiricalCDF queried only at or above the detection threshold x0."""

    source: EmpiricalCDF
    x0: float

    def __post_init__(self):
        if not self.x0 > 0:
            raise DomainError(f"threshold must be positive, got {self.x0}")

    def __call__(self, x):
        values = as_tensor(x)
        if (values < self.x0).any():
            raise BelowThresholdError(f"below detection threshold x0={self.x0:g}")

        return self.source(x)


def censor(ecdf: EmpiricalCDF, x0: float) -> CensoredView:
    return CensoredView(ecdf, float(x0))


# fitting


class PowerLawFit(NamedTuple):
    Q_hat: float
    lnC_hat: float
    x_lo: float
    x_hi: float
    n_points: int
    rms_residual: float
    ci_lo: float
    ci_hi: float

    @property
    def bootstrap_ci_Q(self):
        return self.ci_lo, self.ci_hi


def geometric_grid(x_lo: float, x_hi: float, n_grid: int) -> Tensor:
    xs = torch.linspace(math.log(x_lo), math.log(x_hi), n_grid, dtype=DTYPE).exp()

    # pin the ends, exp(log(x)) may land an ulp below the threshold
    xs[0], xs[-1] = x_lo, x_hi
    return xs


def least_squares(ln_x: Tensor, ln_G: Tensor):
    """Slope, intercept and rms residual of ln G on ln x, batched over leading dims."""
    x_mean = ln_x.mean()
    y_mean = reduce(ln_G, "... n -> ... 1", "mean")

    xc = ln_x - x_mean
    slope = reduce(xc * (ln_G - y_mean), "... n -> ...", "sum") / (xc**2).sum()
    intercept = y_mean.squeeze(-1) - slope * x_mean

    fitted = intercept.unsqueeze(-1) + slope.unsqueeze(-1) * ln_x
    rms = reduce((ln_G - fitted) ** 2, "... n -> ...", "mean").sqrt()
    return slope, intercept, rms


def _check_window(view: CensoredView, x_lo: float, x_hi: float, n_grid: int):
    if not x_lo >= view.x0:
        raise BelowThresholdError(
            f"fit window starts below detection threshold ({x_lo:g} < {view.x0:g})"
        )
    if not x_hi > x_lo:
        raise DomainError(f"fit window is empty, [{x_lo:g}, {x_hi:g}]")
    if not n_grid >= MIN_GRID_POINTS:
        raise DomainError(f"n_grid must be at least {MIN_GRID_POINTS}, got {n_grid}")


def fit_points(
    view: CensoredView, x_lo: float, x_hi: float, n_grid: int = DEFAULT_GRID_POINTS
) -> FitPoints:
    """(ln x, ln G) on the geometric fit grid."""
    _check_window(view, x_lo, x_hi, n_grid)

    xs = geometric_grid(x_lo, x_hi, n_grid)
    G = view(xs)

    if G[0] == 0:
        raise DomainError(f"no mass in fit window, G({x_lo:g}) = 0")
    if (G == G[0]).all():
        raise DomainError("flat window, G is constant over the fit grid")

    return FitPoints(xs.log(), G.log())


def bootstrap_slopes(
    view: CensoredView, xs: Tensor, n_boot: int = DEFAULT_BOOTSTRAPS, seed: int = 0
) -> Tensor:
    """Fitted slopes of `n_boot` resamples of the underlying runs.

    Only the counts between fit grid points enter a grid evaluated ECDF, so a
    resample of all runs is a multinomial draw over those bins.
    """
    ecdf = view.source
    counts = ecdf.counts_between(xs)

    generator = seeded_generator(seed, BOOTSTRAP_STREAM)
    resampled = sample_multinomial(
        ecdf.n_total, counts / ecdf.n_total, n_boot, generator=generator
    )

    G = resampled[:, :-1].cumsum(dim=-1).double() / ecdf.n_total
    kept = G[:, 0] > 0

    if not kept.all():
        logger.debug("dropped %d resamples without mass at x_lo", int((~kept).sum()))

    slopes, _, _ = least_squares(xs.log(), G[kept].log())
    return slopes


def fit_power_law(
    view: CensoredView,
    x_lo: float | None = None,
    x_hi: float | None = None,
    n_grid: int = DEFAULT_GRID_POINTS,
    n_boot: int = DEFAULT_BOOTSTRAPS,
    seed: int = 0,
    peak_floor: float | None = None,
) -> PowerLawFit:
    """Straight line through ln G versus ln x above the threshold.

    Parameters
    ----------
    view: CensoredView
        the observable part of the empirical law.
    x_lo, x_hi: float
        fit window, `default_fit_window` when not given.
    n_grid: int
        points of the geometric fit grid.
    n_boot: int
        bootstrap resamples for the percentile interval on Q, 0 to skip.
    seed: int
        seed of the bootstrap draws.
    peak_floor: float
        smallest pulse peak level, caps the default window.
    """
    if not (exists(x_lo) and exists(x_hi)):
        window_lo, window_hi = default_fit_window(view, peak_floor)
        x_lo, x_hi = default(x_lo, window_lo), default(x_hi, window_hi)

    ln_x, ln_G = fit_points(view, x_lo, x_hi, n_grid)
    slope, intercept, rms = least_squares(ln_x, ln_G)

    ci_lo = ci_hi = math.nan

    if n_boot > 0:
        xs = geometric_grid(x_lo, x_hi, n_grid)
        slopes = bootstrap_slopes(view, xs, n_boot, seed)

        if slopes.numel() > 0:
            tail = (1 - CONFIDENCE) / 2
            ordered = slopes.sort().values
            ci_lo, ci_hi = torch.quantile(ordered, as_tensor([tail, 1 - tail])).tolist()

    fit = PowerLawFit(
        slope.item(), intercept.item(), x_lo, x_hi, n_grid, rms.item(), ci_lo, ci_hi
    )

    logger.info(
        "fit on [%g, %g]: Q=%.4f, ln C=%.4f, 95%% CI [%.4f, %.4f]",
        x_lo,
        x_hi,
        fit.Q_hat,
        fit.lnC_hat,
        ci_lo,
        ci_hi,
    )
    return fit


def default_fit_window(
    view: CensoredView, peak_floor: float | None = None, upper_quantile: float = 0.25
):
    """[x0, quantile of the positives], capped at half the smallest peak level
    when that still leaves a window 1.5 times wide."""
    x_lo = view.x0
    x_hi = view.source.quantile(upper_quantile)

    if exists(peak_floor) and 0.5 * peak_floor >= 1.5 * x_lo:
        x_hi = min(x_hi, 0.5 * peak_floor)

    if not x_hi > x_lo:
        raise DomainError(
            f"no room for a fit window above x0={x_lo:g}, the {upper_quantile:g} quantile is {x_hi:g}"
        )

    return x_lo, x_hi


# extrapolation


def extrapolate(fit: PowerLawFit, x):
    """G(x) = C x^Q from the fitted line, clamped to [0, 1]."""
    scalar = not is_tensor(x)
    x = as_tensor(x)

    if (x <= 0).any():
        raise DomainError("extrapolation needs positive amplitudes")

    G = (fit.lnC_hat + fit.Q_hat * x.log()).exp().clamp(0.0, 1.0)
    return G.item() if scalar else G


def extrapolation_report(
    samples: SampleSet,
    x0: float,
    probe_xs,
    fit: PowerLawFit | None = None,
    **fit_kwargs,
) -> pd.DataFrame:
    """Censor at x0, fit above it and compare each probe below it to the held out ECDF."""
    probe_xs = [float(x) for x in probe_xs]

    if any(not 0 < x < x0 for x in probe_xs):
        raise DomainError(f"probes must lie strictly between 0 and x0={x0:g}")

    if len(probe_xs) == 0:
        return pd.DataFrame(columns=REPORT_COLUMNS)

    ecdf = empirical_cdf(samples)
    if not exists(fit):
        fit = fit_power_law(censor(ecdf, x0), **fit_kwargs)

    G_ext = extrapolate(fit, as_tensor(probe_xs))
    G_true = ecdf(as_tensor(probe_xs))

    rel_err = (G_ext - G_true).abs() / G_true
    rel_err = torch.where(G_true > 0, rel_err, torch.full_like(rel_err, math.inf))

    return pd.DataFrame(
        dict(
            x=probe_xs,
            G_extrapolated=G_ext.numpy(),
            G_true=G_true.numpy(),
            rel_err=rel_err.numpy(),
        )
    )


# diagnostics


def ecdf_curve(ecdf: EmpiricalCDF, n_points: int = 100, min_count: int = 1) -> FitPoints:
    """(ln x, ln G) on a geometric grid spanning the positive amplitudes.

    The grid starts at the `min_count`-th smallest positive amplitude, so that
    larger counts leave out the single-run staircase at the bottom.
    """
    if not min_count >= 1:
        raise DomainError(f"min_count must be at least 1, got {min_count}")
    if ecdf.positives.numel() < min_count + 1:
        raise DomainError(f"need at least {min_count + 1} positive amplitudes")

    lo, hi = ecdf.positives[min_count - 1].item(), ecdf.positives[-1].item()
    if not hi > lo:
        raise DomainError("positive amplitudes are all equal")

    xs = geometric_grid(lo, hi, n_points)
    return FitPoints(xs.log(), ecdf(xs).log())


def local_slopes(ln_x: Tensor, ln_G: Tensor, span: int = 2) -> LocalSlopes:
    """Centred difference slopes over ±span points."""
    assert span >= 1, "span must be positive"

    if ln_x.numel() <= 2 * span:
        raise DomainError(f"need more than {2 * span} points for local slopes")

    rise = ln_G[2 * span :] - ln_G[: -2 * span]
    run = ln_x[2 * span :] - ln_x[: -2 * span]
    return LocalSlopes(ln_x[span:-span], rise / run)


def linear_window(
    ln_x: Tensor, ln_G: Tensor, tolerance: float = 0.15, span: int = 2
) -> LinearWindow:
    """Widest run of local slopes within ±tolerance (relative) of the run median."""
    centres, slopes = local_slopes(ln_x, ln_G, span)
    n = slopes.numel()

    best = (0, 0)

    for start in range(n):
        stop = start + 1

        while stop < n:
            run = slopes[start : stop + 1]
            median = run.median()
            if ((run - median).abs() > tolerance * median.abs()).any():
                break
            stop += 1

        if centres[stop - 1] - centres[start] > centres[best[1]] - centres[best[0]]:
            best = (start, stop - 1)

    lo, hi = best
    median = slopes[lo : hi + 1].median().item()
    width = (centres[hi] - centres[lo]).item()

    return LinearWindow(centres[lo].item(), centres[hi].item(), median, width)
