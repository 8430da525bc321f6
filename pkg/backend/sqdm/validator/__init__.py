"""
SQDM configuration validation.

- Schema: run configs against the pydantic models, manifests against JSON Schema
- Guidelines: controller tuning rules and scan sampling checks
"""

from .guidelines import (
    GuidelineResult,
    GuidelineViolation,
    check_esc,
    check_scan,
    check_spectrum,
    check_stc,
    check_stc_range,
    pixel_dwell_time,
    validate_esc,
)
from .schema import SchemaError, SchemaValidationResult, SchemaValidator
from .engine import ValidationEngine, ValidationResult, all_violations

__all__ = [
    # Schema
    "SchemaError",
    "SchemaValidationResult",
    "SchemaValidator",
    # Guidelines
    "GuidelineResult",
    "GuidelineViolation",
    "check_esc",
    "check_scan",
    "check_spectrum",
    "check_stc",
    "check_stc_range",
    "pixel_dwell_time",
    "validate_esc",
    # Engine
    "ValidationEngine",
    "ValidationResult",
    "all_violations",
]
