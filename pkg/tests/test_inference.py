import math

import pytest
import torch

from shot_noise_pytorch.inference import (
    REPORT_COLUMNS,
    EmpiricalCDF,
    PowerLawFit,
    censor,
    default_fit_window,
    ecdf_curve,
    empirical_cdf,
    extrapolate,
    extrapolation_report,
    fit_points,
    fit_power_law,
    geometric_grid,
    least_squares,
    linear_window,
    local_slopes,
)
from shot_noise_pytorch.process import ProcessConfig, PulseTypeConfig, SampleSet, simulate
from shot_noise_pytorch.shapes import PulseShape
from shot_noise_pytorch.utils import BelowThresholdError, DomainError


def dickman(seed=0):
    return ProcessConfig([PulseTypeConfig(PulseShape.pure_exp(C=1.0, a=1.0), q=1.0)], seed=seed)


def two_rates(seed=0):
    """Two exponential pulse types with a = 1 and a = 2, so Q = 1.5 below F = 1."""
    return ProcessConfig(
        [
            PulseTypeConfig(PulseShape.pure_exp(C=1.0, a=1.0), q=1.0),
            PulseTypeConfig(PulseShape.pure_exp(C=1.0, a=2.0), q=1.0),
        ],
        seed=seed,
    )


def exact_power_law(n=1_000_000, coef=0.3, exponent=2.0) -> EmpiricalCDF:
    """Runs placed at the quantiles of G(x) = coef x^exponent."""
    levels = torch.arange(1, n + 1, dtype=torch.float64) / n
    positives = (levels / coef) ** (1 / exponent)
    return EmpiricalCDF(positives, n, 0)


@pytest.fixture(scope="module")
def dickman_samples():
    return simulate(dickman(seed=21), 100_000)


class TestEmpiricalCDF:
    samples = SampleSet.from_amplitudes([0.0, 1.0, 2.0])

    @pytest.mark.parametrize(
        "x, expected",
        ((-1.0, 0.0), (0.0, 1 / 3), (0.5, 1 / 3), (1.0, 2 / 3), (2.0, 1.0), (3.0, 1.0)),
    )
    def test_values(self, x, expected):
        assert empirical_cdf(self.samples)(x) == pytest.approx(expected)

    def test_tensor(self):
        G = empirical_cdf(self.samples)(torch.tensor([0.5, 1.5], dtype=torch.float64))

        assert G.dtype == torch.float64
        assert G.tolist() == pytest.approx([1 / 3, 2 / 3])

    def test_counts_between(self):
        counts = empirical_cdf(self.samples).counts_between(torch.tensor([0.5, 1.5], dtype=torch.float64))
        assert counts.tolist() == [1.0, 1.0, 1.0]

    def test_empty(self):
        with pytest.raises(DomainError, match="empty"):
            empirical_cdf(SampleSet.from_amplitudes(torch.zeros(0, dtype=torch.float64)))


class TestCensor:
    ecdf = empirical_cdf(SampleSet.from_amplitudes([0.0, 1.0, 2.0]))

    def test_at_threshold(self):
        assert censor(self.ecdf, 1.0)(1.0) == pytest.approx(2 / 3)

    @pytest.mark.parametrize("x", (0.999999, torch.tensor([1.5, 0.5], dtype=torch.float64)))
    def test_below_threshold(self, x):
        with pytest.raises(BelowThresholdError, match="below detection threshold"):
            censor(self.ecdf, 1.0)(x)

    def test_threshold_positive(self):
        with pytest.raises(DomainError):
            censor(self.ecdf, 0.0)


class TestLeastSquares:
    def test_exact_line(self):
        ln_x = torch.linspace(-3, 0, 25, dtype=torch.float64)
        slope, intercept, rms = least_squares(ln_x, math.log(0.3) + 2.0 * ln_x)

        assert slope.item() == pytest.approx(2.0, rel=1e-12)
        assert intercept.item() == pytest.approx(math.log(0.3), rel=1e-12)
        assert rms.item() == pytest.approx(0.0, abs=1e-12)

    def test_batched(self):
        ln_x = torch.linspace(-3, 0, 25, dtype=torch.float64)
        ln_G = torch.stack((1.0 * ln_x, 2.0 * ln_x - 1, 3.0 * ln_x + 1))

        slopes, intercepts, _ = least_squares(ln_x, ln_G)

        assert slopes.shape == (3,)
        assert slopes.tolist() == pytest.approx([1.0, 2.0, 3.0])
        assert intercepts.tolist() == pytest.approx([0.0, -1.0, 1.0], abs=1e-12)

    def test_grid_ends_are_exact(self):
        xs = geometric_grid(0.1, 0.7, 13)

        assert xs[0].item() == 0.1
        assert xs[-1].item() == 0.7
        assert (xs[1:] > xs[:-1]).all()


class TestFit:
    def test_exact_power_law(self):
        view = censor(exact_power_law(), 0.1)
        fit = fit_power_law(view, 0.1, 0.5, n_boot=0)

        assert fit.Q_hat == pytest.approx(2.0, abs=0.01)
        assert fit.lnC_hat == pytest.approx(math.log(0.3), abs=0.02)
        assert math.isnan(fit.ci_lo) and math.isnan(fit.ci_hi)

    def test_dickman(self, dickman_samples):
        view = censor(empirical_cdf(dickman_samples), 0.1)
        fit = fit_power_law(view, peak_floor=1.0, seed=3)

        assert 0.9 <= fit.Q_hat <= 1.1
        assert fit.ci_lo <= fit.Q_hat <= fit.ci_hi
        assert fit.bootstrap_ci_Q == (fit.ci_lo, fit.ci_hi)
        assert fit.x_lo == 0.1
        assert fit.x_hi <= 0.5

    def test_two_types_exponent(self):
        config = ProcessConfig(
            [
                PulseTypeConfig(PulseShape.pure_exp(C=1.0, a=1.0), q=1.0),
                PulseTypeConfig(PulseShape.gamma_exp(C=2.0, a=1.0, d=2.0), q=0.5),
            ],
            seed=13,
        )
        ecdf = empirical_cdf(simulate(config, 100_000))
        x0, x_hi = ecdf.quantile(0.002), ecdf.quantile(0.02)

        fit = fit_power_law(censor(ecdf, x0), x0, x_hi, n_boot=0)
        assert fit.Q_hat == pytest.approx(1.5, rel=0.1)

    def test_default_window(self, dickman_samples):
        view = censor(empirical_cdf(dickman_samples), 0.1)
        x_lo, x_hi = default_fit_window(view)

        assert x_lo == 0.1
        assert x_hi == pytest.approx(view.source.quantile(0.25))

    def test_censoring_does_not_change_fit(self, dickman_samples):
        ecdf = empirical_cdf(dickman_samples)

        censored = fit_power_law(censor(ecdf, 0.1), 0.1, 0.4, seed=5)
        full = fit_power_law(censor(ecdf, 1e-6), 0.1, 0.4, seed=5)

        assert censored == full

    def test_scale_equivariance(self, dickman_samples):
        scale = 3.0
        scaled = SampleSet.from_amplitudes(dickman_samples.amplitudes * scale)

        fit = fit_power_law(censor(empirical_cdf(dickman_samples), 0.1), 0.1, 0.4, n_boot=0)
        fit_scaled = fit_power_law(
            censor(empirical_cdf(scaled), 0.1 * scale), 0.1 * scale, 0.4 * scale, n_boot=0
        )

        assert fit_scaled.Q_hat == pytest.approx(fit.Q_hat, rel=1e-9)
        assert fit_scaled.lnC_hat == pytest.approx(fit.lnC_hat - fit.Q_hat * math.log(scale), abs=1e-9)

    def test_seeded_bootstrap(self, dickman_samples):
        view = censor(empirical_cdf(dickman_samples), 0.1)

        first = fit_power_law(view, 0.1, 0.4, n_boot=50, seed=1)
        second = fit_power_law(view, 0.1, 0.4, n_boot=50, seed=1)

        assert first.bootstrap_ci_Q == second.bootstrap_ci_Q

    @pytest.mark.slow
    def test_interval_coverage(self):
        fits = []

        for seed in range(20):
            view = censor(empirical_cdf(simulate(two_rates(seed=100 + seed), 100_000)), 0.05)
            fits.append(fit_power_law(view, 0.05, 0.5, seed=seed))

        assert all(fit.Q_hat == pytest.approx(1.5, rel=0.1) for fit in fits)
        assert sum(fit.ci_lo <= 1.5 <= fit.ci_hi for fit in fits) >= 18

    def test_window_below_threshold(self, dickman_samples):
        view = censor(empirical_cdf(dickman_samples), 0.1)

        with pytest.raises(BelowThresholdError):
            fit_points(view, 0.05, 0.4)

    @pytest.mark.parametrize("x_lo, x_hi, n_grid", ((0.4, 0.2, 25), (0.1, 0.4, 3)))
    def test_bad_window(self, dickman_samples, x_lo, x_hi, n_grid):
        view = censor(empirical_cdf(dickman_samples), 0.1)

        with pytest.raises(DomainError):
            fit_points(view, x_lo, x_hi, n_grid)

    def test_no_mass(self):
        view = censor(empirical_cdf(SampleSet.from_amplitudes([1.0, 2.0, 3.0])), 0.1)

        with pytest.raises(DomainError, match="no mass in fit window"):
            fit_points(view, 0.1, 0.5)

    def test_flat_window(self):
        view = censor(empirical_cdf(SampleSet.from_amplitudes([0.05, 2.0, 3.0])), 0.1)

        with pytest.raises(DomainError, match="flat window"):
            fit_points(view, 0.1, 0.5)


class TestExtrapolate:
    fit = PowerLawFit(2.0, math.log(0.3), 0.1, 0.5, 25, 0.0, math.nan, math.nan)

    def test_formula(self):
        assert extrapolate(self.fit, 0.5) == pytest.approx(0.075)
        assert extrapolate(self.fit, 10.0) == 1.0

    def test_tensor(self):
        xs = torch.tensor([0.01, 0.1], dtype=torch.float64)
        assert extrapolate(self.fit, xs).tolist() == pytest.approx([3e-5, 3e-3])

    def test_nonpositive(self):
        with pytest.raises(DomainError):
            extrapolate(self.fit, 0.0)

    def test_dickman_report(self, dickman_samples):
        report = extrapolation_report(dickman_samples, 0.1, [0.05, 0.02, 0.01], peak_floor=1.0)

        assert list(report.columns) == REPORT_COLUMNS
        assert report["x"].tolist() == [0.05, 0.02, 0.01]
        assert (report["rel_err"] <= 0.15).all()

    @pytest.mark.slow
    def test_dickman_report_over_seeds(self):
        passed = 0

        for seed in range(20):
            samples = simulate(dickman(seed=200 + seed), 100_000)
            report = extrapolation_report(samples, 0.1, [0.05, 0.02, 0.01], peak_floor=1.0, n_boot=0)
            passed += bool((report["rel_err"] <= 0.15).all())

        assert passed >= 18

    def test_empty_probes(self, dickman_samples):
        report = extrapolation_report(dickman_samples, 0.1, [])

        assert list(report.columns) == REPORT_COLUMNS
        assert len(report) == 0

    @pytest.mark.parametrize("probe", (0.1, 0.2, 0.0))
    def test_probe_outside(self, dickman_samples, probe):
        with pytest.raises(DomainError, match="probes must lie"):
            extrapolation_report(dickman_samples, 0.1, [probe])


class TestDiagnostics:
    def test_ecdf_curve(self, dickman_samples):
        ln_x, ln_G = ecdf_curve(empirical_cdf(dickman_samples), n_points=50)

        assert ln_x.numel() == ln_G.numel() == 50
        assert ln_G[-1].item() == 0.0
        assert (ln_G[1:] >= ln_G[:-1]).all()

    def test_ecdf_curve_skips_staircase(self, dickman_samples):
        ecdf = empirical_cdf(dickman_samples)
        ln_x, ln_G = ecdf_curve(ecdf, n_points=50, min_count=20)

        assert ln_x[0].item() == pytest.approx(ecdf.positives[19].log().item())
        assert ln_G[0].item() == pytest.approx(math.log((ecdf.n_zero + 20) / ecdf.n_total))

    def test_ecdf_curve_min_count(self):
        with pytest.raises(DomainError):
            ecdf_curve(empirical_cdf(SampleSet.from_amplitudes([1.0, 2.0, 3.0])), min_count=3)

    def test_local_slopes(self):
        ln_x = torch.linspace(-4, 0, 41, dtype=torch.float64)
        centres, slopes = local_slopes(ln_x, 1.5 * ln_x + 0.2)

        assert centres.numel() == 37
        assert torch.allclose(slopes, torch.full_like(slopes, 1.5))

    def test_local_slopes_too_short(self):
        ln_x = torch.linspace(-1, 0, 4, dtype=torch.float64)

        with pytest.raises(DomainError):
            local_slopes(ln_x, ln_x)

    def test_linear_window(self):
        ln_x = torch.linspace(-5, 2, 71, dtype=torch.float64)
        ln_G = torch.where(ln_x <= 0, 2.0 * ln_x, torch.zeros_like(ln_x))

        window = linear_window(ln_x, ln_G)

        assert window.slope == pytest.approx(2.0)
        assert window.ln_x_lo == pytest.approx(-4.8)
        assert window.ln_x_hi == pytest.approx(-0.2)
        assert window.width == pytest.approx(4.6)

    def test_linear_window_on_power_law(self):
        ln_x, ln_G = ecdf_curve(exact_power_law(n=100_000), min_count=20)
        window = linear_window(ln_x, ln_G)

        assert window.slope == pytest.approx(2.0, rel=0.05)
        assert window.width >= 1.5
