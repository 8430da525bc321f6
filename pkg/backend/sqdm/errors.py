"""
Exceptions raised by the SQDM simulator.

Every error derives from SqdmError so callers (the CLI in particular) can
catch the package's failures with a single clause.
"""

from __future__ import annotations

from typing import Any, List, Optional, Tuple


class SqdmError(Exception):
    """Base class for all package errors."""


class ConfigError(SqdmError):
    """Invalid or inconsistent run configuration."""


class SpectrumError(SqdmError):
    """Spectrum evaluation request that has no answer (e.g. a flat dip)."""


class FitConvergenceError(SpectrumError):
    """Spectrum fit stopped without converging."""

    def __init__(self, message: str, best: Any = None, cost: Optional[float] = None):
        super().__init__(message)
        self.best = best
        self.cost = cost


class TrajectoryError(SqdmError):
    """Time outside the scan or inconsistent raster geometry."""


class MapLookupError(SqdmError):
    """Position outside the map extent or malformed dip maps."""


class StcReferenceError(SqdmError):
    """Slope tracking reference cannot be placed on the inner slope."""


class FeedforwardError(SqdmError):
    """Line buffer used out of order."""


class ImagingError(SqdmError):
    """Map assembly or scoring failure."""

    def __init__(self, message: str, missing: Optional[List[Tuple[int, int]]] = None):
        super().__init__(message)
        self.missing = list(missing or [])
