import math

import pytest
import torch


def test_simulate():
    from shot_noise_pytorch import ProcessConfig, PulseShape, PulseTypeConfig, simulate

    config = ProcessConfig(
        [
            PulseTypeConfig(PulseShape.gamma_exp(C=2.0, a=1.0, d=2.0), q=0.5),
            PulseTypeConfig(PulseShape.pure_exp(C=1.0, a=1.0), q=1.0),
        ],
        seed=7,
    )

    samples = simulate(config, n_runs=10_000, num_workers=4)
    assert len(samples) == 10_000
    assert samples.amplitudes.dtype == torch.float64


@pytest.mark.parametrize("alpha", (0.5, 2.0))
def test_laplace(alpha):
    from shot_noise_pytorch import (
        ProcessConfig,
        PulseShape,
        PulseTypeConfig,
        analytic_laplace,
        mc_laplace,
        simulate,
    )

    config = ProcessConfig([PulseTypeConfig(PulseShape.gamma_exp(C=2.0, a=1.0, d=2.0), q=0.5)])
    samples = simulate(config, 10_000)

    w_hat, stderr = mc_laplace(samples, alpha)
    w = analytic_laplace(config, alpha)  # Monte Carlo lands within a few standard errors

    assert abs(w_hat - w) < 5 * stderr


def test_density():
    from shot_noise_pytorch import (
        ProcessConfig,
        PulseShape,
        PulseTypeConfig,
        cdf_from_density,
        dickman_reference,
        residual_check,
        solve_density,
    )

    config = ProcessConfig([PulseTypeConfig(PulseShape.pure_exp(C=1.0, a=1.0), q=1.0)])

    grid = solve_density(config, h=1e-3, A_max=10.0)
    G = cdf_from_density(grid, 1.0)  # e^{-γ}, the Dickman law

    assert G == pytest.approx(dickman_reference(1.0), rel=5e-3)
    assert G == pytest.approx(math.exp(-0.5772156649), rel=5e-3)
    assert residual_check(grid, config) < 1e-3


def test_extrapolation():
    from shot_noise_pytorch import (
        ProcessConfig,
        PulseShape,
        PulseTypeConfig,
        censor,
        empirical_cdf,
        extrapolate,
        extrapolation_report,
        fit_power_law,
        simulate,
    )

    config = ProcessConfig([PulseTypeConfig(PulseShape.pure_exp(C=1.0, a=1.0), q=1.0)], seed=1)
    samples = simulate(config, 100_000)

    # only amplitudes at or above x0 = 0.1 are detected
    view = censor(empirical_cdf(samples), x0=0.1)
    fit = fit_power_law(view, x_lo=0.1, x_hi=0.4, n_boot=200, seed=0)

    lo, hi = fit.bootstrap_ci_Q
    assert lo <= fit.Q_hat <= hi

    assert extrapolate(fit, 0.01) == pytest.approx(math.exp(fit.lnC_hat) * 0.01**fit.Q_hat)

    report = extrapolation_report(samples, 0.1, [0.05, 0.02, 0.01], fit=fit)
    assert (report.rel_err < 0.15).all()


def test_config():
    from shot_noise_pytorch import parse_config

    run = parse_config(
        """
        [process]
        seed = 7
        n_runs = 100000

        [[pulse]]
        family = "pure_exp"
        C = 1.0
        a = 1.0
        q = 1.0

        [inference]
        x0 = 0.1
        probes = [0.05, 0.02, 0.01]
        """
    )

    assert run.inference.probes == (0.05, 0.02, 0.01)
