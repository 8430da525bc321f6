"""
Slope tracking controller.

Integral feedback holding the measured frequency shift at a reference on
the inner slope of a dip (right slope of the negative dip, left slope of
the positive dip). The regulated bias sits about one width away from the
minimum; the resulting systematic error can be quantified and removed
from assembled maps by inverting the dip shape.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import SpectrumError, StcReferenceError
from .models import DipSelector, SpectrumParams, StcConfig, default_stc_gain, default_stc_rho
from .spectrum import dip_component, eval_spectrum, g_shape, true_dip_minimum

logger = logging.getLogger(__name__)

RHO_MIN = 0.05
RHO_MAX = 0.95

# Smallest dip fraction used when inverting the dip shape
MIN_DIP_RATIO = 1e-6


def _invert_g(params: SpectrumParams, level: float) -> float:
    """Smallest s >= 0 with g(s) = level."""
    if level <= 0.0:
        return 0.0
    hi = 1.0
    while g_shape(params, hi) < level:
        hi *= 2.0
        if hi > 1e6:
            raise StcReferenceError(f"g(x) never reaches {level:.4g}; positive dip does not decay")
    return float(brentq(lambda s: g_shape(params, s) - level, 0.0, hi, xtol=1e-14))


def dip_offset(params: SpectrumParams, dip: DipSelector, ratio: float) -> float:
    """
    Signed distance from the dip center to the inner-slope point where the
    dip component equals ratio * depth.
    """
    level = math.log(1.0 / ratio)
    if DipSelector(dip) is DipSelector.NEGATIVE:
        return params.w_neg * math.sqrt(level)
    return -params.w_pos * _invert_g(params, level)


def pick_reference(params: SpectrumParams, dip: DipSelector, rho: float) -> Tuple[float, float]:
    """
    Reference (Delta f_ref, V_b at the reference) on the inner slope.

    The point is where the dip component has magnitude rho * |depth|.

    Raises:
        StcReferenceError: flat dip, or rho outside [0.05, 0.95] (a
            reference in the flat tail or at the minimum).
    """
    dip = DipSelector(dip)
    depth, center, _ = params.dip(dip)
    if depth == 0:
        raise StcReferenceError(f"{dip.value} dip is flat; no slope to track")
    if not RHO_MIN <= rho <= RHO_MAX:
        raise StcReferenceError(
            f"rho={rho} places the reference too close to the "
            f"{'minimum' if rho > RHO_MAX else 'flat tail'}; use {RHO_MIN} <= rho <= {RHO_MAX}"
        )
    v_ref = center + dip_offset(params, dip, rho)
    return float(eval_spectrum(params, v_ref)), float(v_ref)


def reference_crossing(params: SpectrumParams, dip: DipSelector, delta_f_ref: float) -> float:
    """
    Bias on the inner slope where the full spectrum equals delta_f_ref.

    Raises:
        StcReferenceError: the reference is not crossed between the dip
            minimum and three widths towards the parabola vertex.
    """
    dip = DipSelector(dip)
    _, center, width = params.dip(dip)
    try:
        v_min = true_dip_minimum(params, dip)
    except SpectrumError as e:
        raise StcReferenceError(str(e)) from e
    if dip is DipSelector.NEGATIVE:
        lo, hi = v_min, center + 3.0 * width
    else:
        lo, hi = center - 3.0 * width, v_min

    f_lo = eval_spectrum(params, lo) - delta_f_ref
    f_hi = eval_spectrum(params, hi) - delta_f_ref
    if f_lo * f_hi > 0:
        raise StcReferenceError(
            f"Delta f_ref={delta_f_ref:.4f} Hz is not reachable on the inner slope "
            f"of the {dip.value} dip ([{lo:.4f}, {hi:.4f}] V)"
        )
    return float(brentq(lambda v: eval_spectrum(params, v) - delta_f_ref, lo, hi, xtol=1e-14))


def systematic_error(params: SpectrumParams, dip: DipSelector, delta_f_ref: float) -> float:
    """|V_b at the reference - true dip minimum| (V)."""
    return abs(reference_crossing(params, dip, delta_f_ref) - true_dip_minimum(params, dip))


def shift_dip(params: SpectrumParams, dip: DipSelector, shift: float) -> SpectrumParams:
    """Copy with the selected dip moved by shift (V)."""
    if DipSelector(dip) is DipSelector.NEGATIVE:
        return params.with_dip_centers(params.v_neg + shift, params.v_pos)
    return params.with_dip_centers(params.v_neg, params.v_pos + shift)


def _crosses(params: SpectrumParams, dip: DipSelector, delta_f_ref: float, shift: float) -> bool:
    try:
        reference_crossing(shift_dip(params, dip, shift), dip, delta_f_ref)
    except StcReferenceError:
        return False
    return True


def reachable_shifts(
    params: SpectrumParams,
    dip: DipSelector,
    delta_f_ref: float,
    limit: float = 1.0,
    tol: float = 1e-5,
) -> Tuple[float, float]:
    """
    Dip displacements (lo, hi) in V over which delta_f_ref stays on the inner slope.

    The dip rides on the parabola, so moving it changes the level of its
    slope while the reference stays where it was calibrated. Each side is
    widened by doubling from one dip width and then bisected to tol; a side
    that is still reachable at +-limit reports the limit.

    Raises:
        StcReferenceError: delta_f_ref is not reachable at the calibrated position.
    """
    dip = DipSelector(dip)
    reference_crossing(params, dip, delta_f_ref)
    width = params.dip(dip).width
    bounds = []
    for sign in (-1.0, 1.0):
        good, step = 0.0, width
        bad = None
        while step < limit:
            if _crosses(params, dip, delta_f_ref, sign * step):
                good, step = step, 2.0 * step
            else:
                bad = step
                break
        if bad is None:
            if _crosses(params, dip, delta_f_ref, sign * limit):
                bounds.append(sign * limit)
                continue
            bad = limit
        while bad - good > tol:
            mid = 0.5 * (good + bad)
            if _crosses(params, dip, delta_f_ref, sign * mid):
                good = mid
            else:
                bad = mid
        bounds.append(sign * good)
    logger.debug(
        "%s dip keeps Delta f_ref=%.4f Hz for shifts in [%.4f, %.4f] V",
        dip.value, delta_f_ref, bounds[0], bounds[1],
    )
    return bounds[0], bounds[1]


@dataclass(frozen=True)
class StcParams:
    """Resolved STC parameters."""

    delta_f_ref: float
    k_stc: float
    dip: DipSelector
    rho: float
    v_ref: float

    @classmethod
    def from_config(cls, cfg: StcConfig, spectrum: SpectrumParams) -> "StcParams":
        """Fill per-dip defaults and place the reference on the given spectrum."""
        dip = DipSelector(cfg.dip)
        rho = cfg.rho if cfg.rho is not None else default_stc_rho(dip)
        delta_f_ref, v_ref = pick_reference(spectrum, dip, rho)
        return cls(
            delta_f_ref=delta_f_ref,
            k_stc=cfg.K if cfg.K is not None else default_stc_gain(dip),
            dip=dip,
            rho=rho,
            v_ref=v_ref,
        )


@dataclass
class StcState:
    integrator: float
    error: float = 0.0
    faults: int = 0
    fault: bool = False


class SlopeTrackingController:
    """Integral controller V_b,C += T_s * K_STC * (Delta f_ref - Delta f)."""

    def __init__(self, params: StcParams, t_s: float, v_b_c0: Optional[float] = None):
        self.params = params
        self.t_s = t_s
        self.state = StcState(integrator=params.v_ref if v_b_c0 is None else float(v_b_c0))

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
        self.state = StcState(integrator=float(v_b_c0))

    def shift(self, delta: float) -> None:
        self.state.integrator += delta

    def dither(self, t: float) -> float:
        return 0.0

    def update(self, measurement: float, t: float = 0.0) -> float:
        state = self.state
        if not math.isfinite(measurement):
            state.faults += 1
            state.fault = True
            logger.debug("STC: non-finite measurement at t=%.4f s, holding %.6f V", t, state.integrator)
            return state.integrator
        state.fault = False
        state.error = self.params.delta_f_ref - measurement
        state.integrator += self.t_s * self.params.k_stc * state.error
        return state.integrator


def stc_step(
    state: StcState,
    params: StcParams,
    measurement: float,
    t_s: float,
) -> Tuple[StcState, float]:
    """Functional single step; the input state is not modified."""
    controller = SlopeTrackingController(params, t_s)
    controller.state = replace(state)
    v_b_c = controller.update(measurement)
    return controller.state, v_b_c


def compensate_map(
    v_b_map: np.ndarray,
    spectrum: SpectrumParams,
    dip: DipSelector,
    delta_f_ref: float,
) -> np.ndarray:
    """
    Dip centers from a map of regulated biases.

    At every pixel the loop held parabola + other dip + d * shape(x) at
    delta_f_ref; solving for the shape argument on the inner slope gives
    the center. NaN pixels stay NaN.
    """
    dip = DipSelector(dip)
    depth, _, _ = spectrum.dip(dip)
    if depth == 0:
        raise StcReferenceError(f"{dip.value} dip is flat; nothing to invert")
    v_b = np.asarray(v_b_map, dtype=float)
    background = eval_spectrum(spectrum, v_b) - dip_component(spectrum, dip, v_b)
    ratio = np.clip((delta_f_ref - background) / depth, MIN_DIP_RATIO, 1.0)

    centers = np.full(v_b.shape, np.nan)
    finite = np.isfinite(v_b)
    if dip is DipSelector.NEGATIVE:
        offsets = spectrum.w_neg * np.sqrt(np.log(1.0 / ratio[finite]))
    else:
        offsets = np.array([
            -spectrum.w_pos * _invert_g(spectrum, math.log(1.0 / r)) for r in ratio[finite]
        ])
    centers[finite] = v_b[finite] - offsets
    return centers
