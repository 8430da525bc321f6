"""
SQDM control: closed-loop bias control for scanning quantum dot microscopy.

This package simulates extremum seeking and slope tracking control of the
bias voltage over raster scans, with previous-line feedforward, and builds
and scores effective surface potential images.
"""

from .models import (
    ControllerKind,
    DipSelector,
    EscConfig,
    FeedforwardConfig,
    PlantParams,
    PotentialMode,
    RunConfig,
    SampleSpec,
    ScanConfig,
    SpectrumParams,
    StcConfig,
    SweepConfig,
)

__version__ = "1.0.0"
__all__ = [
    "ControllerKind",
    "DipSelector",
    "EscConfig",
    "FeedforwardConfig",
    "PlantParams",
    "PotentialMode",
    "RunConfig",
    "SampleSpec",
    "ScanConfig",
    "SpectrumParams",
    "StcConfig",
    "SweepConfig",
]
