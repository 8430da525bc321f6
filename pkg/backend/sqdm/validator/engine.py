"""
Validation Engine.

Runs the config schema check and the controller, scan and spectrum
guideline checks as one pipeline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from ..errors import SqdmError
from ..esc import EscParams
from ..models import ControllerKind, DipSelector, RunConfig
from ..plant import DipMaps
from .guidelines import (
    GuidelineResult,
    check_esc,
    check_scan,
    check_spectrum,
    check_stc,
    check_stc_range,
    pixel_dwell_time,
)
from .schema import SchemaValidationResult, SchemaValidator

logger = logging.getLogger(__name__)


@dataclass
class ValidationResult:
    """
    Combined result.

    Contains:
    - schema: config structure (only when validating a file)
    - guidelines: one GuidelineResult per checked section
    """

    valid: bool
    schema_result: Optional[SchemaValidationResult] = None
    guideline_results: Dict[str, GuidelineResult] = field(default_factory=dict)

    @property
    def total_errors(self) -> int:
        count = len(self.schema_result.errors) if self.schema_result else 0
        count += sum(len(r.errors) for r in self.guideline_results.values())
        return count

    @property
    def total_warnings(self) -> int:
        return sum(len(r.warnings) for r in self.guideline_results.values())

    def summary(self) -> str:
        """Generate a summary of validation results."""
        lines = [f"Validation {'PASSED' if self.valid else 'FAILED'}"]
        lines.append(f"  Errors: {self.total_errors}")
        lines.append(f"  Warnings: {self.total_warnings}")
        for name, result in self.guideline_results.items():
            lines.append(f"  {name}: {result.checks_run} checks, {len(result.violations)} findings")
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON output."""
        return {
            "valid": self.valid,
            "total_errors": self.total_errors,
            "total_warnings": self.total_warnings,
            "schema": {
                "valid": self.schema_result.valid,
                "errors": [str(e) for e in self.schema_result.errors],
            } if self.schema_result else None,
            "guidelines": {name: r.to_dict() for name, r in self.guideline_results.items()},
        }


class ValidationEngine:
    """Checks a run configuration before anything is simulated."""

    def __init__(self, schema_validator: Optional[SchemaValidator] = None):
        self.schema_validator = schema_validator or SchemaValidator()

    def validate_file(self, path: Path, overrides: Optional[Dict[str, Any]] = None) -> ValidationResult:
        """Schema check of a config file, then guidelines if it parses."""
        schema_result = self.schema_validator.validate_config_file(path)
        if not schema_result.valid:
            return ValidationResult(valid=False, schema_result=schema_result)
        config = RunConfig.from_file(path).with_overrides(overrides or {})
        result = self.validate(config)
        result.schema_result = schema_result
        return result

    @staticmethod
    def _sample_maps(config: RunConfig) -> Optional[DipMaps]:
        """Dip maps of the configured sample, or None when they cannot be loaded."""
        from ..scan import load_sample

        try:
            return load_sample(config).maps
        except (SqdmError, OSError) as e:
            logger.warning("Sample not checked: %s", e)
            return None

    def validate(
        self,
        config: RunConfig,
        dips: Optional[Sequence[DipSelector]] = None,
        controller: Optional[ControllerKind] = None,
    ) -> ValidationResult:
        """Guideline checks for the configured controller on each dip."""
        controller = ControllerKind(controller or config.scan.controller)
        dips = list(dips) if dips else [config.dip]
        width, height = config.sample.width, config.sample.height

        results: Dict[str, GuidelineResult] = {
            "spectrum": check_spectrum(config.spectrum),
            "scan": check_scan(config.scan, width, height),
        }
        dwell = pixel_dwell_time(config.scan, width, height)
        maps: Optional[DipMaps] = None
        for dip in dips:
            dip = DipSelector(dip)
            if controller is ControllerKind.ESC:
                params = EscParams.from_config(
                    config.esc.model_copy(update={"dip": dip}), config.plant.omega_pll
                )
                results[f"esc.{dip.value}"] = check_esc(
                    params, config.spectrum, config.plant.omega_pll, config.scan.t_s, dwell
                )
            else:
                stc = config.stc.model_copy(update={"dip": dip})
                found = check_stc(stc, config.spectrum)
                maps = maps or self._sample_maps(config)
                if maps is not None:
                    found.extend(check_stc_range(stc, config.spectrum, maps))
                results[f"stc.{dip.value}"] = found

        valid = all(r.valid for r in results.values())
        return ValidationResult(valid=valid, guideline_results=results)


def all_violations(result: ValidationResult) -> List[str]:
    """Flat list of printable findings."""
    lines = [str(e) for e in result.schema_result.errors] if result.schema_result else []
    for r in result.guideline_results.values():
        lines.extend(str(v) for v in r.violations)
    return lines
