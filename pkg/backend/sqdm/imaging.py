"""
Image reconstruction and scoring.

Scan records are binned into per-pixel dip maps, two dip maps are combined
into the effective surface potential Phi*, and images are scored against a
ground truth with MSE and PSNR.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from .artifacts import write_key_values
from .errors import ImagingError

logger = logging.getLogger(__name__)

# PSNR reported for a perfect reconstruction (dB)
PSNR_SATURATED = 999.0

FAULT_CONTROLLER = 1
FAULT_OUTSIDE_WINDOW = 2

RECORD_COLUMNS = (
    "t", "x", "y", "line", "row", "col", "forward",
    "v_b", "v_b_c", "v_b_ff", "dither", "delta_f", "error", "fault",
)
_INT_COLUMNS = {"line", "row", "col", "forward", "fault"}


@dataclass
class ScanRecord:
    """
    Per-sample time series of one dip run.

    v_b is the imaging bias V_b,C + V_b,FF; the dither is kept in its own
    column and never enters v_b.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    line: np.ndarray
    row: np.ndarray
    col: np.ndarray
    forward: np.ndarray
    v_b: np.ndarray
    v_b_c: np.ndarray
    v_b_ff: np.ndarray
    dither: np.ndarray
    delta_f: np.ndarray
    error: np.ndarray
    fault: np.ndarray

    @classmethod
    def allocate(cls, size: int) -> "ScanRecord":
        floats = {name: np.zeros(size) for name in RECORD_COLUMNS if name not in _INT_COLUMNS}
        ints = {name: np.zeros(size, dtype=np.int64) for name in _INT_COLUMNS}
        return cls(**floats, **ints)

    def __len__(self) -> int:
        return len(self.t)

    def truncated(self, size: int) -> "ScanRecord":
        return ScanRecord(**{name: getattr(self, name)[:size] for name in RECORD_COLUMNS})

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write all columns; floats at full precision so reruns compare byte for byte."""
        columns = [getattr(self, name) for name in RECORD_COLUMNS]
        fmt = ["%d" if name in _INT_COLUMNS else "%.17g" for name in RECORD_COLUMNS]
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(
            path,
            np.column_stack(columns) if len(self) else np.empty((0, len(RECORD_COLUMNS))),
            delimiter=",",
            fmt=fmt,
            header=",".join(RECORD_COLUMNS),
            comments="",
        )

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ScanRecord":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] == 0:
            return cls.allocate(0)
        if data.shape[1] != len(RECORD_COLUMNS):
            raise ImagingError(f"{path}: expected {len(RECORD_COLUMNS)} columns, got {data.shape[1]}")
        values = {}
        for i, name in enumerate(RECORD_COLUMNS):
            values[name] = data[:, i].astype(np.int64) if name in _INT_COLUMNS else data[:, i]
        return cls(**values)


def per_line_rms(record: ScanRecord, column: str = "error") -> np.ndarray:
    """RMS of a record column per scanned line (both passes)."""
    values = getattr(record, column)
    lines = record.line.astype(np.int64)
    count = int(lines.max()) + 1 if len(lines) else 0
    sums = np.bincount(lines, weights=values ** 2, minlength=count)
    counts = np.bincount(lines, minlength=count)
    return np.sqrt(sums / np.maximum(counts, 1))


@dataclass
class AssembledMap:
    """Per-pixel mean bias with sample counts."""

    values: np.ndarray
    counts: np.ndarray
    missing: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing


def assemble_map(record: ScanRecord, width: int, height: int, strict: bool = False) -> AssembledMap:
    """
    Mean of v_b over all samples in each pixel, both scan directions pooled.

    Pixels without samples are NaN and listed in `missing`.

    Raises:
        ImagingError: strict and at least one pixel has no samples.
    """
    flat = record.row.astype(np.int64) * width + record.col.astype(np.int64)
    counts = np.bincount(flat, minlength=width * height)[: width * height]
    sums = np.bincount(flat, weights=record.v_b, minlength=width * height)[: width * height]
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    values = values.reshape(height, width)
    counts = counts.reshape(height, width)
    missing = [(int(r), int(c)) for r, c in zip(*np.nonzero(counts == 0))]
    if missing:
        logger.warning("%d of %d pixels have no samples", len(missing), width * height)
        if strict:
            raise ImagingError(f"{len(missing)} pixels not covered by the scan", missing=missing)
    return AssembledMap(values=values, counts=counts, missing=missing)


@dataclass
class PotentialImage:
    """Phi* grid (V) with its reference points."""

    values: np.ndarray
    v_neg0: float
    delta_v0: float
    extent_x: float = 0.0
    extent_y: float = 0.0
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.values.shape)


def _missing_pixels(grid: np.ndarray) -> List[Tuple[int, int]]:
    return [(int(r), int(c)) for r, c in zip(*np.nonzero(~np.isfinite(grid)))]


def compute_phi_star(
    v_neg_map: np.ndarray,
    v_pos_map: np.ndarray,
    v_neg0: float,
    delta_v0: float,
    **metadata: Any,
) -> PotentialImage:
    """
    Phi* = V_neg0 * (V+ - V-) / dV0 - V- per pixel.

    Raises:
        ImagingError: shape mismatch, dV0 == 0 or missing pixels.
    """
    v_neg = np.atleast_2d(np.asarray(v_neg_map, dtype=float))
    v_pos = np.atleast_2d(np.asarray(v_pos_map, dtype=float))
    if v_neg.shape != v_pos.shape:
        raise ImagingError(f"Dip maps differ in shape: {v_neg.shape} vs {v_pos.shape}")
    if delta_v0 == 0:
        raise ImagingError("delta_v0 must be non-zero")
    values = v_neg0 * (v_pos - v_neg) / delta_v0 - v_neg
    missing = _missing_pixels(values)
    if missing:
        raise ImagingError(f"{len(missing)} pixels have no value", missing=missing)
    return PotentialImage(
        values=values,
        v_neg0=v_neg0,
        delta_v0=delta_v0,
        extent_x=float(metadata.pop("extent_x", 0.0)),
        extent_y=float(metadata.pop("extent_y", 0.0)),
        provenance=dict(metadata),
    )


@dataclass
class ScoreResult:
    """Image quality against a reference."""

    mse: float
    rmse_mv: float
    psnr_db: float
    peak_to_peak_mv: float
    error_map: np.ndarray

    def to_dict(self) -> Dict[str, float]:
        return {
            "mse_v2": self.mse,
            "rmse_mv": self.rmse_mv,
            "psnr_db": self.psnr_db,
            "reference_range_mv": self.peak_to_peak_mv,
            "max_abs_error_mv": float(np.max(np.abs(self.error_map))) * 1e3,
        }

    def save(self, path: Union[str, Path]) -> None:
        write_key_values(path, self.to_dict())


def _grid(image: Union[PotentialImage, np.ndarray]) -> np.ndarray:
    if isinstance(image, PotentialImage):
        return image.values
    return np.atleast_2d(np.asarray(image, dtype=float))


def score(
    image: Union[PotentialImage, np.ndarray],
    reference: Union[PotentialImage, np.ndarray],
) -> ScoreResult:
    """
    MSE (V^2), RMSE (mV), PSNR = 10 log10(R^2 / MSE) with R the reference
    peak-to-peak, and the pixelwise error map (image - reference).

    A perfect image reports PSNR_SATURATED.

    Raises:
        ImagingError: shape mismatch, missing pixels, or a flat reference
            with non-zero error.
    """
    estimate, truth = _grid(image), _grid(reference)
    if estimate.shape != truth.shape:
        raise ImagingError(f"Image shape {estimate.shape} does not match reference {truth.shape}")
    missing = _missing_pixels(estimate) + _missing_pixels(truth)
    if missing:
        raise ImagingError(f"{len(missing)} pixels have no value", missing=missing)

    error_map = estimate - truth
    mse = float(np.mean(error_map ** 2))
    peak_to_peak = float(np.ptp(truth))
    if mse == 0.0:
        psnr = PSNR_SATURATED
    elif peak_to_peak == 0.0:
        raise ImagingError("Reference image is flat; PSNR is undefined")
    else:
        psnr = 10.0 * math.log10(peak_to_peak ** 2 / mse)
    return ScoreResult(
        mse=mse,
        rmse_mv=math.sqrt(mse) * 1e3,
        psnr_db=psnr,
        peak_to_peak_mv=peak_to_peak * 1e3,
        error_map=error_map,
    )
