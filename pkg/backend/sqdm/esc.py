"""
Extremum seeking controller.

A sinusoidal dither on the bias makes the measured frequency shift
oscillate with an amplitude proportional to the local slope. High-pass
filtering, demodulation with the phase-compensated dither and low-pass
filtering recover that slope; an integrator moves the bias against it
until the slope vanishes at the dip minimum.

Sign convention: the integrator applies V_b,C += T_s * K_ESC * grad with
grad = -xi3, so the default negative gains descend. The gain is
compensated for the PLL and high-pass magnitude at the dither frequency.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

from .models import DipSelector, EscConfig, default_esc_gain

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def _pll_response(omega: float, omega_pll: float) -> complex:
    if math.isinf(omega_pll):
        return 1.0 + 0.0j
    return omega_pll / (1j * omega + omega_pll)


def _hp_response(omega: float, omega_h: float) -> complex:
    return 1j * omega / (1j * omega + omega_h)


def phase_compensation(omega_d: float, omega_pll: float, omega_h: float) -> float:
    """Phase (rad) of PLL times high-pass at the dither frequency."""
    return cmath.phase(_pll_response(omega_d, omega_pll) * _hp_response(omega_d, omega_h))


def path_magnitude(omega_d: float, omega_pll: float, omega_h: float) -> float:
    """|G_PLL * G_HP| at the dither frequency; the low-pass is excluded."""
    return abs(_pll_response(omega_d, omega_pll) * _hp_response(omega_d, omega_h))


def compensated_gain(k: float, omega_d: float, omega_pll: float, omega_h: float) -> float:
    """K_ESC = k / |G_PLL(i w_d) G_HP(i w_d)|."""
    return k / path_magnitude(omega_d, omega_pll, omega_h)


@dataclass(frozen=True)
class EscParams:
    """Resolved ESC parameters in absolute units."""

    a_d: float
    omega_d: float
    omega_l: float
    omega_h: float
    k: float
    dip: DipSelector
    omega_pll: float
    k_scale_by_pll: bool = True

    @classmethod
    def from_config(cls, cfg: EscConfig, omega_pll: float) -> "EscParams":
        """Turn relative frequencies into rad/s and fill the per-dip default gain."""
        omega_d = cfg.omega_d_rel * omega_pll
        return cls(
            a_d=cfg.a_d,
            omega_d=omega_d,
            omega_l=cfg.omega_L_rel * omega_d,
            omega_h=cfg.omega_H_rel * omega_d,
            k=cfg.k if cfg.k is not None else default_esc_gain(cfg.dip),
            dip=DipSelector(cfg.dip),
            omega_pll=omega_pll,
            k_scale_by_pll=cfg.k_scale_by_pll,
        )

    @property
    def phi(self) -> float:
        return phase_compensation(self.omega_d, self.omega_pll, self.omega_h)

    @property
    def magnitude(self) -> float:
        return path_magnitude(self.omega_d, self.omega_pll, self.omega_h)

    @property
    def effective_k(self) -> float:
        """k as it acts on the unity-gain PLL model."""
        if self.k_scale_by_pll and not math.isinf(self.omega_pll):
            return self.k * self.omega_pll
        return self.k

    @property
    def k_esc(self) -> float:
        return compensated_gain(self.effective_k, self.omega_d, self.omega_pll, self.omega_h)


@dataclass
class EscState:
    """Filter states, integrator and last demodulation signals."""

    integrator: float
    hp_y: float = 0.0
    hp_u_prev: Optional[float] = None
    lp_y: float = 0.0
    dither_phase: float = 0.0
    xi1: float = 0.0
    xi2: float = 0.0
    xi3: float = 0.0
    error: float = 0.0
    faults: int = 0
    fault: bool = False


class GradientEstimator:
    """
    Dither demodulation chain.

    Filters are discretized by pole matching at T_s: the high-pass as
    y = a_H y + (1 + a_H)/2 (u - u_prev), the low-pass as
    y = a_L y + (1 - a_L) u. The high-pass starts at rest on the first
    sample.
    """

    def __init__(self, params: EscParams, t_s: float):
        self.params = params
        self.t_s = t_s
        self.alpha_h = math.exp(-params.omega_h * t_s)
        self.gain_h = 0.5 * (1.0 + self.alpha_h)
        self.alpha_l = math.exp(-params.omega_l * t_s)
        self.phi = params.phi
        self.demod_gain = -2.0 / (params.a_d * params.a_d)
        self.magnitude = params.magnitude

    def dither(self, t: float) -> float:
        return self.params.a_d * math.sin(self.params.omega_d * t)

    def update(self, state: EscState, measurement: float, t: float) -> None:
        """Advance filters by one sample in place."""
        if state.hp_u_prev is None:
            state.hp_u_prev = measurement
        state.hp_y = self.alpha_h * state.hp_y + self.gain_h * (measurement - state.hp_u_prev)
        state.hp_u_prev = measurement
        state.xi1 = state.hp_y

        wt = self.params.omega_d * t
        demod = state.xi1 * self.params.a_d * math.sin(wt + self.phi)
        state.lp_y = self.alpha_l * state.lp_y + (1.0 - self.alpha_l) * demod
        state.xi2 = state.lp_y
        state.xi3 = self.demod_gain * state.xi2
        state.dither_phase = math.fmod(wt, TWO_PI)

    def gradient(self, state: EscState) -> float:
        """Slope estimate dDelta f/dV_b, corrected for the path magnitude."""
        return -state.xi3 / self.magnitude


class ExtremumSeekingController:
    """ESC feedback loop around a GradientEstimator."""

    def __init__(self, params: EscParams, t_s: float, v_b_c0: float = 0.0):
        self.params = params
        self.t_s = t_s
        self.estimator = GradientEstimator(params, t_s)
        self.k_esc = params.k_esc
        self.state = EscState(integrator=float(v_b_c0))

    @property
    def output(self) -> float:
        return self.state.integrator

    @property
    def error(self) -> float:
        return self.state.error

    @property
    def faults(self) -> int:
        return self.state.faults

    def reset(self, v_b_c0: float) -> None:
        self.state = EscState(integrator=float(v_b_c0))

    def shift(self, delta: float) -> None:
        """Move the integrator without touching the filters."""
        self.state.integrator += delta

    def dither(self, t: float) -> float:
        return self.estimator.dither(t)

    def gradient(self) -> float:
        return self.estimator.gradient(self.state)

    def update(self, measurement: float, t: float) -> float:
        """
        Consume the measurement taken with the dither at time t.

        A non-finite measurement freezes filters and integrator and counts
        a fault.
        """
        state = self.state
        if not math.isfinite(measurement):
            state.faults += 1
            state.fault = True
            logger.debug("ESC: non-finite measurement at t=%.4f s, holding %.6f V", t, state.integrator)
            return state.integrator
        state.fault = False
        self.estimator.update(state, measurement, t)
        # e_d = 0 - Delta f', with Delta f' estimated by -xi3
        state.integrator -= self.t_s * self.k_esc * state.xi3
        state.error = -self.estimator.gradient(state)
        return state.integrator


def esc_step(
    state: EscState,
    params: EscParams,
    measurement: float,
    t_s: float,
    t: float,
) -> Tuple[EscState, float, float]:
    """
    Functional single step.

    Returns the new state, V_b,C and the dither for time t. The input
    state is not modified.
    """
    controller = ExtremumSeekingController(params, t_s)
    controller.state = replace(state)
    v_b_c = controller.update(measurement, t)
    return controller.state, v_b_c, controller.dither(t)
