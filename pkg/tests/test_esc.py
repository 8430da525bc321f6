"""
Tests for the extremum seeking controller.
"""

import math

import numpy as np
import pytest

from backend.sqdm.esc import (
    EscParams,
    EscState,
    ExtremumSeekingController,
    GradientEstimator,
    compensated_gain,
    esc_step,
    path_magnitude,
    phase_compensation,
)
from backend.sqdm.models import DipSelector, EscConfig, PlantParams, SpectrumParams
from backend.sqdm.plant import SqdmPlant
from backend.sqdm.spectrum import true_dip_minimum

T_S = 0.005


def estimate_gradient(spectrum, v_b, a_d=1e-3, seconds=5.0, average=2.0):
    """Mean slope estimate at a fixed bias over the last `average` seconds."""
    params = EscParams.from_config(EscConfig(a_d=a_d), omega_pll=10.0)
    estimator = GradientEstimator(params, T_S)
    state = EscState(integrator=v_b)
    plant = SqdmPlant(spectrum, PlantParams(omega_pll=10.0, sigma_n=0.0), T_S)
    steps = int(round(seconds / T_S))
    tail = []
    for k in range(steps):
        t = k * T_S
        measurement = plant.output(v_b + estimator.dither(t), spectrum.v_neg, spectrum.v_pos)
        estimator.update(state, measurement, t)
        if k >= steps - int(round(average / T_S)):
            tail.append(estimator.gradient(state))
    return float(np.mean(tail))


class TestPathCompensation:
    """Tests for phase and magnitude compensation."""

    def test_magnitude(self):
        """Test |G_PLL G_HP| at the default dither frequency."""
        expected = 10.0 / math.sqrt(1700.0) * 40.0 / math.sqrt(16000.0)
        assert path_magnitude(40.0, 10.0, 120.0) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.0767, abs=1e-4)

    def test_phase(self):
        """Test the PLL lag and high-pass lead add up."""
        expected = -math.atan(4.0) + (math.pi / 2 - math.atan(3.0))
        assert phase_compensation(40.0, 10.0, 120.0) == pytest.approx(expected, rel=1e-12)

    def test_infinite_pll(self):
        """Test an ideal PLL leaves only the high-pass."""
        assert path_magnitude(40.0, math.inf, 120.0) == pytest.approx(40.0 / math.sqrt(16000.0))

    def test_compensated_gain(self):
        """Test the gain is divided by the path magnitude."""
        assert compensated_gain(-1e-3, 40.0, 10.0, 120.0) == pytest.approx(-1e-3 / path_magnitude(40.0, 10.0, 120.0))


class TestEscParams:
    """Tests for EscParams."""

    def test_from_config_defaults(self):
        """Test relative frequencies and the negative-dip gain."""
        params = EscParams.from_config(EscConfig(), omega_pll=10.0)
        assert params.omega_d == 40.0
        assert params.omega_l == pytest.approx(8.0)
        assert params.omega_h == pytest.approx(120.0)
        assert params.k == -5e-5
        assert params.effective_k == pytest.approx(-5e-4)
        assert params.k_esc == pytest.approx(-5e-4 / params.magnitude)

    def test_positive_dip_gain(self):
        """Test the positive dip has its own default gain."""
        params = EscParams.from_config(EscConfig(dip="pos"), omega_pll=10.0)
        assert params.k == -6e-5

    def test_unscaled_gain(self):
        """Test k is used as given when PLL scaling is off."""
        params = EscParams.from_config(EscConfig(k=-2e-4, k_scale_by_pll=False), omega_pll=10.0)
        assert params.effective_k == -2e-4


class TestGradientEstimator:
    """Tests for the dither demodulation chain."""

    @pytest.mark.parametrize("p1", [-1.3, -0.5, 0.8])
    def test_parabola_slope(self, p1):
        """Test the estimate matches the slope of a parabola within 10 percent."""
        spectrum = SpectrumParams(p1=p1, d_neg=0.0, d_pos=0.0)
        v_b = -1.0
        slope = 2 * p1 * v_b + spectrum.p2
        assert estimate_gradient(spectrum, v_b) == pytest.approx(slope, rel=0.1)

    def test_dither_amplitude_invariance(self):
        """Test doubling the dither leaves the estimate unchanged."""
        spectrum = SpectrumParams(d_neg=0.0, d_pos=0.0)
        small = estimate_gradient(spectrum, -1.0, a_d=1e-3)
        large = estimate_gradient(spectrum, -1.0, a_d=2e-3)
        assert large == pytest.approx(small, rel=0.01)

    def test_dither_signal(self):
        """Test the dither is a sine at omega_d."""
        params = EscParams.from_config(EscConfig(a_d=2e-3), omega_pll=10.0)
        estimator = GradientEstimator(params, T_S)
        assert estimator.dither(0.0) == 0.0
        assert estimator.dither(math.pi / 80.0) == pytest.approx(2e-3)


class TestExtremumSeekingController:
    """Tests for the closed ESC loop."""

    def test_converges_to_negative_minimum(self):
        """Test the loop settles at the true minimum within 10 s from half a dip width away."""
        spectrum = SpectrumParams()
        v_min = true_dip_minimum(spectrum, DipSelector.NEGATIVE)
        controller = ExtremumSeekingController(
            EscParams.from_config(EscConfig(), omega_pll=10.0), T_S, v_b_c0=v_min + 0.5 * spectrum.w_neg
        )
        plant = SqdmPlant(spectrum, PlantParams(sigma_n=0.0), T_S)
        trace = []
        for k in range(2000):
            t = k * T_S
            measurement = plant.output(controller.output + controller.dither(t), spectrum.v_neg, spectrum.v_pos)
            trace.append(controller.update(measurement, t))
        assert abs(np.mean(trace[-200:]) - v_min) < 1e-4
        assert abs(trace[-1] - v_min) < 3e-4

    def test_non_finite_measurement(self):
        """Test a NaN measurement holds the integrator and counts a fault."""
        controller = ExtremumSeekingController(EscParams.from_config(EscConfig(), 10.0), T_S, v_b_c0=-1.3)
        assert controller.update(math.nan, 0.0) == -1.3
        assert controller.faults == 1
        assert controller.state.fault
        controller.update(-4.7, T_S)
        assert not controller.state.fault

    def test_shift_and_reset(self):
        """Test moving and resetting the integrator."""
        controller = ExtremumSeekingController(EscParams.from_config(EscConfig(), 10.0), T_S, v_b_c0=-1.3)
        controller.shift(0.01)
        assert controller.output == pytest.approx(-1.29)
        controller.reset(-1.0)
        assert controller.output == -1.0

    def test_esc_step_is_pure(self):
        """Test the functional step leaves its input untouched."""
        params = EscParams.from_config(EscConfig(), 10.0)
        state = EscState(integrator=-1.3)
        new_state, v_b_c, dither = esc_step(state, params, -4.78, T_S, 0.01)
        assert state.integrator == -1.3
        assert state.hp_u_prev is None
        assert new_state.hp_u_prev == -4.78
        assert v_b_c == new_state.integrator
        assert dither == pytest.approx(1e-3 * math.sin(0.4))
