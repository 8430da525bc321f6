"""
Controller Guideline Checks.

Tuning rules for the extremum seeking and slope tracking controllers,
plus sampling sanity checks for a scan:
- dither amplitude no larger than the dip width
- dither frequency between 2 and 10 times the PLL bandwidth
- low-pass cutoff between 0.1 and 0.5 times the dither frequency
- high-pass cutoff at least half the dither frequency
- dither below the Nyquist frequency, at least one sample per pixel
- STC reference reachable and gain sign matching the inner slope
- STC reference kept on the inner slope wherever the sample moves the dip

Findings are collected, never raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from ..esc import EscParams
from ..errors import SqdmError
from ..models import DipSelector, ScanConfig, SpectrumParams, StcConfig
from ..plant import DipMaps
from ..spectrum import eval_derivative, g_shape
from ..stc import StcParams, reachable_shifts


@dataclass
class GuidelineViolation:
    """A single guideline finding."""

    rule: str
    field_path: str
    message: str
    actual_value: Optional[str] = None
    expected_value: Optional[str] = None
    severity: str = "error"

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "rule": self.rule,
            "field_path": self.field_path,
            "message": self.message,
            "actual_value": self.actual_value,
            "expected_value": self.expected_value,
            "severity": self.severity,
        }

    def __str__(self) -> str:
        return f"[{self.severity}] {self.rule} ({self.field_path}): {self.message}"


@dataclass
class GuidelineResult:
    """Collected guideline findings."""

    valid: bool = True
    violations: List[GuidelineViolation] = field(default_factory=list)
    checks_run: int = 0

    def add_violation(
        self,
        rule: str,
        field_path: str,
        message: str,
        actual_value: Optional[str] = None,
        expected_value: Optional[str] = None,
        severity: str = "error",
    ) -> None:
        """Add a finding; errors invalidate the result."""
        self.violations.append(GuidelineViolation(
            rule=rule,
            field_path=field_path,
            message=message,
            actual_value=actual_value,
            expected_value=expected_value,
            severity=severity,
        ))
        if severity == "error":
            self.valid = False

    def extend(self, other: "GuidelineResult") -> None:
        for violation in other.violations:
            self.add_violation(**{k: getattr(violation, k) for k in (
                "rule", "field_path", "message", "actual_value", "expected_value", "severity"
            )})
        self.checks_run += other.checks_run

    @property
    def errors(self) -> List[GuidelineViolation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> List[GuidelineViolation]:
        return [v for v in self.violations if v.severity == "warning"]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "valid": self.valid,
            "violations": [v.to_dict() for v in self.violations],
            "checks_run": self.checks_run,
        }


def validate_esc(params: EscParams, spectrum: SpectrumParams, omega_pll: float) -> List[GuidelineViolation]:
    """The four ESC tuning guidelines; an empty list means all hold."""
    result = GuidelineResult()
    width = spectrum.dip(params.dip).width

    if params.a_d > width:
        result.add_violation(
            "dither_amplitude", "esc.a_d",
            "dither exceeds dip width",
            actual_value=f"{params.a_d:g} V",
            expected_value=f"<= {width:g} V",
        )
    ratio_d = params.omega_d / omega_pll
    if not 2.0 <= ratio_d <= 10.0:
        result.add_violation(
            "dither_frequency", "esc.omega_d_rel",
            "dither frequency must lie between 2 and 10 times omega_PLL",
            actual_value=f"{ratio_d:g}",
            expected_value="[2, 10]",
        )
    ratio_l = params.omega_l / params.omega_d
    if not 0.1 <= ratio_l <= 0.5:
        result.add_violation(
            "low_pass_cutoff", "esc.omega_L_rel",
            "low-pass cutoff must lie between 0.1 and 0.5 times omega_d",
            actual_value=f"{ratio_l:g}",
            expected_value="[0.1, 0.5]",
        )
    ratio_h = params.omega_h / params.omega_d
    if ratio_h < 0.5:
        result.add_violation(
            "high_pass_cutoff", "esc.omega_H_rel",
            "high-pass cutoff must be at least half the dither frequency",
            actual_value=f"{ratio_h:g}",
            expected_value=">= 0.5",
        )
    return result.violations


def check_esc(
    params: EscParams,
    spectrum: SpectrumParams,
    omega_pll: float,
    t_s: float,
    pixel_dwell: Optional[float] = None,
) -> GuidelineResult:
    """Tuning guidelines plus sampling checks for the ESC."""
    result = GuidelineResult(checks_run=6)
    for violation in validate_esc(params, spectrum, omega_pll):
        result.add_violation(**violation.to_dict())

    nyquist = math.pi / t_s
    if params.omega_d >= nyquist:
        result.add_violation(
            "dither_nyquist", "esc.omega_d_rel",
            "dither frequency is not below the Nyquist frequency of the sample time",
            actual_value=f"{params.omega_d:g} rad/s",
            expected_value=f"< {nyquist:g} rad/s",
        )
    if pixel_dwell is not None:
        period = 2.0 * math.pi / params.omega_d
        if period > pixel_dwell:
            result.add_violation(
                "dither_dwell", "esc.omega_d_rel",
                "one dither period is longer than the pixel dwell time; pixels see partial dither cycles",
                actual_value=f"{period:.4g} s",
                expected_value=f"<= {pixel_dwell:.4g} s",
                severity="warning",
            )
    return result


def check_stc(cfg: StcConfig, spectrum: SpectrumParams) -> GuidelineResult:
    """STC reference reachability and gain sign."""
    result = GuidelineResult(checks_run=2)
    try:
        params = StcParams.from_config(cfg, spectrum)
    except SqdmError as e:
        result.add_violation(
            "stc_reference", "stc.rho",
            f"reference cannot be placed on the inner slope: {e}",
        )
        return result

    slope = float(eval_derivative(spectrum, params.v_ref))
    # descent needs K and the local slope to share a sign
    if params.k_stc * slope <= 0:
        result.add_violation(
            "stc_gain_sign", "stc.K",
            "gain sign does not match the inner-slope sign; the loop will run away from the reference",
            actual_value=f"K={params.k_stc:g}, slope={slope:.4g} Hz/V",
            expected_value="same sign",
            severity="warning",
        )
    return result


def check_stc_range(cfg: StcConfig, spectrum: SpectrumParams, maps: DipMaps) -> GuidelineResult:
    """
    Every dip position of the map must keep the calibrated reference on
    the inner slope.

    The reference is placed on the spectrum of the first pixel, as the
    scan does. Pixels whose dip moved further than the reachable range
    leave the slope tracking loop without a crossing, and the dip is lost.
    """
    result = GuidelineResult(checks_run=1)
    dip = DipSelector(cfg.dip)
    positions = maps.v_neg if dip is DipSelector.NEGATIVE else maps.v_pos
    calibration = spectrum.with_dip_centers(maps.v_neg[0, 0], maps.v_pos[0, 0])
    try:
        params = StcParams.from_config(cfg, calibration)
        lo, hi = reachable_shifts(calibration, dip, params.delta_f_ref)
    except SqdmError:
        # check_stc reports an unplaceable reference
        return result

    shifts = np.asarray(positions, dtype=float) - positions[0, 0]
    low, high = float(np.nanmin(shifts)), float(np.nanmax(shifts))
    if low < lo or high > hi:
        result.add_violation(
            "stc_range", "sample",
            f"{dip.value} dip moves outside the range where Delta f_ref={params.delta_f_ref:.3f} Hz "
            "stays on the inner slope; the slope tracking loop will lose the dip",
            actual_value=f"[{1e3 * low:.1f}, {1e3 * high:.1f}] mV from the first pixel",
            expected_value=f"within [{1e3 * lo:.1f}, {1e3 * hi:.1f}] mV",
            severity="warning",
        )
    return result


def check_scan(cfg: ScanConfig, width: int, height: int) -> GuidelineResult:
    """At least one sample per pixel on every pass."""
    result = GuidelineResult(checks_run=1)
    lines = cfg.lines or height
    pixels = cfg.pixels_per_line or width
    passes = 2 if cfg.back_and_forth else 1
    pass_time = cfg.scan_time_total / (lines * passes)
    samples_per_pixel = pass_time / (pixels * cfg.t_s)
    if cfg.speed_profile:
        starts = [s.start for s in cfg.speed_profile] + [1.0]
        speeds = [s.multiplier for s in cfg.speed_profile]
        relative_time = sum((b - a) / m for a, b, m in zip(starts, starts[1:], speeds))
        samples_per_pixel /= max(speeds) * relative_time
    if samples_per_pixel < 1.0:
        result.add_violation(
            "samples_per_pixel", "scan.t_s",
            "fewer than one sample per pixel; pixels would be skipped",
            actual_value=f"{samples_per_pixel:.3g}",
            expected_value=">= 1",
        )
    return result


def check_spectrum(spectrum: SpectrumParams) -> GuidelineResult:
    """The positive dip must decay: g(x) >= 0 for |x| <= 3."""
    result = GuidelineResult(checks_run=1)
    samples = [i / 100.0 for i in range(-300, 301)]
    worst = min(g_shape(spectrum, x) for x in samples)
    if worst < 0:
        result.add_violation(
            "dip_shape", "spectrum.a1",
            "g(x) is negative inside |x| <= 3; the positive dip grows instead of decaying",
            actual_value=f"min g = {worst:.4g}",
            expected_value=">= 0",
            severity="warning",
        )
    return result


def pixel_dwell_time(cfg: ScanConfig, width: int, height: int) -> float:
    """Nominal time the tip spends over one pixel in one pass."""
    lines = cfg.lines or height
    pixels = cfg.pixels_per_line or width
    passes = 2 if cfg.back_and_forth else 1
    return cfg.scan_time_total / (lines * passes * pixels)


__all__ = [
    "GuidelineResult",
    "GuidelineViolation",
    "check_esc",
    "check_scan",
    "check_spectrum",
    "check_stc",
    "check_stc_range",
    "pixel_dwell_time",
    "validate_esc",
]
