from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd
import torch

from shot_noise_pytorch.config import RunConfig, load_config
from shot_noise_pytorch.density import cdf_from_density, solve_density
from shot_noise_pytorch.inference import (
    censor,
    default_fit_window,
    ecdf_curve,
    empirical_cdf,
    extrapolation_report,
    fit_points,
    fit_power_law,
    linear_window,
)
from shot_noise_pytorch.process import ProcessConfig, PulseTypeConfig, SampleSet, simulate
from shot_noise_pytorch.shapes import PulseShape, peak
from shot_noise_pytorch.transform import LaplaceRow, laplace_table, q_constant
from shot_noise_pytorch.utils import (
    ConfigError,
    DomainError,
    NumericalError,
    exists,
    seeded_generator,
    setup_logging,
)

logger = logging.getLogger(__name__)

# exit codes

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2

# demo scenario, ten gamma-exp pulse types observed over 0 <= τ <= 10

DEMO_TYPES = 10
DEMO_RANGES = dict(C=(1.0, 5.0), a=(1.0, 3.0), d=(1.0, 5.0))
DEMO_HORIZON = 10.0
DEMO_RUNS = (1000, 100_000)
DEMO_BELOW = 20  # runs left below the demo threshold
DEMO_STREAM = 0xDE30


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_USAGE rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# helpers


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _run_config(args) -> RunConfig:
    run = load_config(args.config)
    return run.with_overrides(seed=args.seed, n_runs=args.runs, x0=args.x0)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _samples(args, run: RunConfig) -> SampleSet:
    if exists(args.samples):
        logger.info("reading samples from %s", args.samples)
        return SampleSet.from_csv(args.samples, run.process.digest())

    return simulate(run.process, run.n_runs, num_workers=args.workers)


def _write(frame: pd.DataFrame, path: Path):
    frame.to_csv(path, index=False)
    logger.info("wrote %s", path)


def _peak_floor(config: ProcessConfig) -> float:
    return min(peak(shape).F_peak for shape in config.shapes)


def _fit(run: RunConfig, samples: SampleSet, x0: float):
    settings = run.inference
    view = censor(empirical_cdf(samples), x0)

    fit = fit_power_law(
        view,
        settings.x_lo,
        settings.x_hi,
        n_grid=settings.n_grid,
        n_boot=settings.n_boot,
        seed=run.process.seed,
        peak_floor=_peak_floor(run.process),
    )
    return view, fit


def _summary(fit) -> dict:
    return dict(
        Q_hat=fit.Q_hat,
        lnC_hat=fit.lnC_hat,
        ci_lo=fit.ci_lo,
        ci_hi=fit.ci_hi,
        rms=fit.rms_residual,
    )


# subcommands


def cmd_simulate(args):
    run = _run_config(args)
    samples = simulate(run.process, run.n_runs, num_workers=args.workers)

    out = Path(args.samples) if exists(args.samples) else _out_dir(args) / "samples.csv"
    out.parent.mkdir(parents=True, exist_ok=True)

    samples.to_csv(out)
    logger.info("wrote %s", out)


def cmd_verify(args):
    run = _run_config(args)
    samples = _samples(args, run)

    rows = laplace_table(samples, run.process, run.alphas)
    frame = pd.DataFrame(rows, columns=LaplaceRow._fields)

    worst = frame["sigma_ratio"].max() if len(frame) > 0 else 0.0
    logger.info("largest deviation %.2f standard errors", worst)

    _write(frame, _out_dir(args) / "verify.csv")


def cmd_density(args):
    run = _run_config(args)
    grid = solve_density(run.process, run.density.h, run.density.A_max)

    logger.info("G(A_max) = %.6f, Q = %.4f", cdf_from_density(grid, grid.A_max), grid.Q)
    _write(grid.to_frame(), _out_dir(args) / "density.csv")


def cmd_fit(args):
    run = _run_config(args)
    samples = _samples(args, run)

    view, fit = _fit(run, samples, run.require_x0())
    points = fit_points(view, fit.x_lo, fit.x_hi, fit.n_points)

    out = _out_dir(args)
    _write(
        pd.DataFrame(dict(ln_x=points.ln_x.numpy(), ln_G=points.ln_G.numpy())),
        out / "fit_points.csv",
    )
    _write(pd.DataFrame([_summary(fit)]), out / "fit_summary.csv")


def cmd_extrapolate(args):
    run = _run_config(args)
    samples = _samples(args, run)

    x0 = run.require_x0()
    probes = args.probe if exists(args.probe) else run.inference.probes

    fit = None
    if len(probes) > 0:
        _, fit = _fit(run, samples, x0)

    report = extrapolation_report(samples, x0, probes, fit=fit)
    _write(report, _out_dir(args) / "extrapolation.csv")


def demo_config(seed: int) -> ProcessConfig:
    """Ten GammaExp types with C, a, d drawn once from the seed, all q = 1."""
    generator = seeded_generator(seed, DEMO_STREAM)

    draws = {
        name: lo + (hi - lo) * torch.rand(DEMO_TYPES, generator=generator, dtype=torch.float64)
        for name, (lo, hi) in DEMO_RANGES.items()
    }

    types = [
        PulseTypeConfig(
            PulseShape.gamma_exp(C, a, d), q=1.0, horizon=DEMO_HORIZON
        )
        for C, a, d in zip(draws["C"].tolist(), draws["a"].tolist(), draws["d"].tolist())
    ]
    return ProcessConfig(types, seed=seed)


def cmd_paper_demo(args):
    seed = args.seed if exists(args.seed) else 0
    config = demo_config(seed)
    Q_theory = q_constant(config)

    curves, fits = [], []

    for n_runs in DEMO_RUNS:
        samples = simulate(config, n_runs, num_workers=args.workers)
        ecdf = empirical_cdf(samples)

        curve = ecdf_curve(ecdf)
        curves.append(
            pd.DataFrame(dict(n_runs=n_runs, ln_x=curve.ln_x.numpy(), ln_G=curve.ln_G.numpy()))
        )

        x0 = ecdf.quantile(DEMO_BELOW / n_runs)
        view = censor(ecdf, x0)
        x_lo, x_hi = default_fit_window(view, _peak_floor(config))
        fit = fit_power_law(view, x_lo, x_hi, seed=seed)

        rel_err = abs(fit.Q_hat - Q_theory) / Q_theory
        window = linear_window(*ecdf_curve(ecdf, min_count=DEMO_BELOW))

        logger.info(
            "n=%d: fitted Q=%.3f, Σ1/a=%.3f, relative error %.1f%%",
            n_runs,
            fit.Q_hat,
            Q_theory,
            100 * rel_err,
        )

        fits.append(
            dict(
                n_runs=n_runs,
                **_summary(fit),
                Q_theory=Q_theory,
                Q_rel_err=rel_err,
                linear_width=window.width,
            )
        )

    pulses = pd.DataFrame(
        [
            dict(
                type=i,
                family=ptype.shape.family.value,
                C=ptype.shape.C,
                a=ptype.shape.a,
                d=ptype.shape.d,
                q=ptype.q,
                horizon=ptype.horizon,
            )
            for i, ptype in enumerate(config.types)
        ]
    )

    out = _out_dir(args)
    _write(pd.concat(curves, ignore_index=True), out / "lnG_vs_lnx.csv")
    _write(pd.DataFrame(fits), out / "demo_fit.csv")
    _write(pulses, out / "demo_pulses.csv")


# parser


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="shot-noise",
        description="Shot noise amplitudes, their power law head and extrapolation below a detection threshold.",
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="count", default=0)
    common.add_argument("--seed", type=int, default=None, help="master seed, overrides [process] seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--workers", type=_positive_int, default=1, help="threads for simulation blocks")

    configured = argparse.ArgumentParser(add_help=False)
    configured.add_argument("config", help="TOML run configuration")
    configured.add_argument("--runs", type=_positive_int, default=None, help="overrides [process] n_runs")
    configured.add_argument("--x0", type=float, default=None, help="overrides [inference] x0")
    configured.add_argument("--samples", default=None, help="samples CSV to reuse")

    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    commands = dict(
        simulate=(cmd_simulate, "draw amplitudes, write samples.csv (or --samples PATH)"),
        verify=(cmd_verify, "Monte Carlo against analytic Laplace transform, write verify.csv"),
        density=(cmd_density, "solve the density equation, write density.csv"),
        fit=(cmd_fit, "log-log fit above x0, write fit_points.csv and fit_summary.csv"),
        extrapolate=(cmd_extrapolate, "extrapolate below x0, write extrapolation.csv"),
    )

    for name, (handler, summary) in commands.items():
        sub = subparsers.add_parser(name, parents=[common, configured], help=summary)
        sub.set_defaults(handler=handler)

        if name == "extrapolate":
            sub.add_argument("--probe", type=float, action="append", help="probe amplitude below x0, repeatable")

    demo = subparsers.add_parser(
        "paper-demo",
        parents=[common],
        help="ten pulse type scenario at 10³ and 10⁵ runs, write lnG_vs_lnx.csv and demo_fit.csv",
    )
    demo.set_defaults(handler=cmd_paper_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()

    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return stop.code if isinstance(stop.code, int) else EXIT_USAGE

    setup_logging(max(-1, min(1, args.verbose - args.quiet)))

    try:
        args.handler(args)
    except (ConfigError, OSError) as err:
        logger.error("%s", err)
        return EXIT_USAGE
    except (DomainError, NumericalError) as err:
        logger.error("%s", err)
        return EXIT_NUMERIC

    return EXIT_OK
