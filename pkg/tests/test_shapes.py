import math

import pytest
import torch
from scipy.integrate import quad

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
from shot_noise_pytorch.utils import DomainError


class TestPulseShape:
    def test_families(self):
        assert PulseShape.gamma_exp(1, 1, 1).family == Family.GAMMA_EXP
        assert PulseShape.pure_exp(1, 1).family == Family.PURE_EXP
        assert PulseShape("pure_exp", 1.0, 2.0).rising is False

    @pytest.mark.parametrize(
        "kwargs",
        (
            dict(family="gamma_exp", C=0.0, a=1.0, d=1.0),
            dict(family="gamma_exp", C=1.0, a=-1.0, d=1.0),
            dict(family="gamma_exp", C=1.0, a=1.0, d=None),
            dict(family="pure_exp", C=1.0, a=1.0, d=1.0),
            dict(family="pure_exp", C=1.0, a=1.0, b=-0.5),
        ),
    )
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            PulseShape(**kwargs)


class TestEval:
    shape = PulseShape.gamma_exp(C=2.0, a=1.0, d=1.0)
    delayed = PulseShape.gamma_exp(C=2.0, a=1.0, d=1.0, b=0.5)

    def test_known_values(self):
        assert eval_pulse(self.shape, 0.0) == 0.0
        assert eval_pulse(self.shape, math.log(2)) == pytest.approx(0.5)
        assert eval_pulse(PulseShape.pure_exp(1.0, 1.0), 1.0) == pytest.approx(math.exp(-1))

    def test_zero_before_onset(self):
        assert eval_pulse(self.shape, -1e-3) == 0.0
        assert eval_pulse(self.delayed, -0.6) == 0.0
        assert eval_pulse(self.delayed, -0.4) > 0.0

    def test_tensor_matches_scalar(self):
        taus = torch.linspace(-1, 20, 101, dtype=torch.float64)
        batched = eval_pulse(self.shape, taus)

        assert batched.dtype == torch.float64
        assert (batched >= 0).all()
        assert torch.allclose(
            batched,
            torch.tensor([eval_pulse(self.shape, t) for t in taus.tolist()], dtype=torch.float64),
            rtol=1e-12,
            atol=0.0,
        )

    def test_finite_integral(self):
        total, _ = quad(lambda t: eval_pulse(self.shape, t), 0, math.inf)
        assert total == pytest.approx(pulse_moment(self.shape), rel=1e-8)


class TestPeak:
    def test_gamma_exp(self):
        tau_peak, F_peak = peak(PulseShape.gamma_exp(1.0, 1.0, 1.0))

        assert tau_peak == pytest.approx(math.log(2))
        assert F_peak == pytest.approx(0.25)

    def test_gamma_exp_grid_search(self):
        shape = PulseShape.gamma_exp(3.0, 2.0, 4.0)
        taus = torch.linspace(0, 5, 500_001, dtype=torch.float64)
        values = eval_pulse(shape, taus)

        tau_peak, F_peak = peak(shape)
        assert F_peak == pytest.approx(values.max().item(), rel=1e-9)
        assert tau_peak == pytest.approx(taus[values.argmax()].item(), abs=2e-5)

    def test_pure_exp_at_onset(self):
        assert peak(PulseShape.pure_exp(3.0, 2.0)) == (0.0, 3.0)
        assert peak(PulseShape.pure_exp(3.0, 2.0, b=1.5)) == (-1.5, 3.0)


class TestLevelDuration:
    shape = PulseShape.gamma_exp(C=2.0, a=1.0, d=1.0)

    def test_pure_exp_closed_form(self):
        shape = PulseShape.pure_exp(C=1.0, a=1.0)

        assert level_duration(shape, math.exp(-1)) == pytest.approx(1.0)
        assert level_duration(shape, 2.0) == 0.0

    def test_indicator_oracle(self):
        taus = torch.linspace(0, 12, 1_000_001, dtype=torch.float64)
        dt = (taus[1] - taus[0]).item()

        oracle = (eval_pulse(self.shape, taus) >= 0.1).sum().item() * dt
        assert level_duration(self.shape, 0.1) == pytest.approx(oracle, abs=3 * dt)

    def test_batched_matches_scalar(self):
        levels = torch.logspace(-8, math.log10(0.49), 50, dtype=torch.float64)
        batched = level_duration(self.shape, levels)
        scalar = [level_duration(self.shape, F) for F in levels.tolist()]

        assert torch.allclose(batched, torch.tensor(scalar, dtype=torch.float64), rtol=1e-10, atol=1e-12)

    def test_nonincreasing(self):
        levels = torch.linspace(1e-6, 0.6, 400, dtype=torch.float64)
        durations = level_duration(self.shape, levels)

        assert (durations[1:] <= durations[:-1]).all()
        assert durations[-1] == 0.0

    def test_exponential_tail(self):
        F = 1e-6
        assert level_duration(self.shape, F) == pytest.approx(math.log(2.0 / F), abs=1e-5)

    def test_translation_invariant(self):
        delayed = PulseShape.gamma_exp(C=2.0, a=1.0, d=1.0, b=0.7)
        assert level_duration(delayed, 0.1) == pytest.approx(level_duration(self.shape, 0.1), rel=1e-12)

    @pytest.mark.parametrize("F", (0.0, -1.0))
    def test_nonpositive_level(self, F):
        with pytest.raises(DomainError, match="level must be positive"):
            level_duration(self.shape, F)


class TestCrossings:
    shape = PulseShape.gamma_exp(C=2.0, a=1.0, d=1.0)

    def test_above_peak_collapses(self):
        tau_peak, F_peak = peak(self.shape)
        assert crossing_times(self.shape, F_peak * 1.01) == (tau_peak, tau_peak)

    def test_nonpositive_level(self):
        t_left, t_right = crossing_times(self.shape, 0.0)

        assert t_left == 0.0
        assert t_right == math.inf

    def test_levels_are_hit(self):
        t_left, t_right = crossing_times(self.shape, 0.2)

        assert eval_pulse(self.shape, t_left) == pytest.approx(0.2, rel=1e-10)
        assert eval_pulse(self.shape, t_right) == pytest.approx(0.2, rel=1e-10)
        assert t_left < peak(self.shape).tau_peak < t_right


class TestSupport:
    def test_truncation(self):
        shape = PulseShape.gamma_exp(C=2.0, a=1.0, d=1.0)
        t_lo, t_hi = effective_support(shape, 1e-8)

        assert t_lo == 0.0
        assert eval_pulse(shape, t_hi) == pytest.approx(1e-8, rel=1e-6)
        assert eval_pulse(shape, t_hi + 0.1) < 1e-8

    def test_level_above_peak(self):
        with pytest.raises(DomainError, match="truncation level above peak"):
            effective_support(PulseShape.gamma_exp(1.0, 1.0, 1.0), 0.3)


class TestMoments:
    @pytest.mark.parametrize("order", (1, 2, 3))
    @pytest.mark.parametrize(
        "shape",
        (PulseShape.gamma_exp(2.0, 1.0, 3.0), PulseShape.pure_exp(1.5, 0.5, b=1.0)),
    )
    def test_quadrature(self, shape, order):
        oracle, _ = quad(lambda t: eval_pulse(shape, t) ** order, -shape.b, math.inf)
        assert pulse_moment(shape, order) == pytest.approx(oracle, rel=1e-8)

    def test_partial(self):
        shape = PulseShape.pure_exp(1.0, 1.0)
        assert pulse_moment(shape, 1, upper=1.0) == pytest.approx(1 - math.exp(-1))


def random_shapes(n, seed=0):
    generator = torch.Generator().manual_seed(seed)
    C, a, d = (
        lo + (hi - lo) * torch.rand(n, generator=generator, dtype=torch.float64)
        for lo, hi in ((1.0, 5.0), (1.0, 3.0), (1.0, 5.0))
    )
    return [PulseShape.gamma_exp(*params) for params in zip(C.tolist(), a.tolist(), d.tolist())]


class TestRandomShapes:
    shapes = random_shapes(200)

    @pytest.mark.parametrize(
        "shape", (PulseShape.gamma_exp(1.0, 1.0, 5.0), PulseShape.gamma_exp(2.0, 1.0, 2.0))
    )
    def test_fast_rise_deep_tail(self, shape):
        levels = torch.logspace(-10, -1, 2000, dtype=torch.float64).tolist()
        durations = [level_duration(shape, F) for F in levels]

        assert all(math.isfinite(duration) for duration in durations)
        assert durations == sorted(durations, reverse=True)

    def test_support(self):
        for shape in self.shapes:
            _, t_hi = effective_support(shape, 1e-8)

            assert eval_pulse(shape, t_hi) == pytest.approx(1e-8, rel=1e-6)
            assert t_hi > peak(shape).tau_peak

    def test_nonincreasing(self):
        for shape in self.shapes[:40]:
            F_peak = peak(shape).F_peak
            levels = torch.logspace(-10, math.log10(0.99 * F_peak), 40, dtype=torch.float64)

            scalar = torch.tensor([level_duration(shape, F) for F in levels.tolist()], dtype=torch.float64)
            batched = level_duration(shape, levels)

            assert (scalar[1:] <= scalar[:-1]).all()
            assert torch.allclose(batched, scalar, rtol=1e-9, atol=1e-12)

    def test_tail_law(self):
        F = 1e-10

        for shape in self.shapes:
            assert level_duration(shape, F) == pytest.approx(math.log(shape.C / F) / shape.a, abs=1e-6)
