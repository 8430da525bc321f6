"""
Discrete-time SQDM plant.

The tip follows a raster trajectory over the sample. At every sample the
dips are placed at the dip maps' values for the pixel under the tip, the
static spectrum is evaluated at the applied bias, passed through the
first-order PLL and corrupted by white Gaussian noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .artifacts import read_key_values, read_matrix, write_key_values, write_matrix
from .errors import MapLookupError, TrajectoryError
from .models import PlantParams, ScanConfig, SpectrumParams
from .spectrum import SpectrumKernel

logger = logging.getLogger(__name__)

MAPS_HEADER = "maps.txt"
MAP_NEG_FILE = "v_neg.txt"
MAP_POS_FILE = "v_pos.txt"

# Samples of noise drawn per generator call
NOISE_BLOCK = 4096

# Positions this close outside the extent are treated as on the edge (A)
EDGE_TOLERANCE = 1e-9


@dataclass
class DipMaps:
    """Ground-truth dip positions per pixel, rows are y-lines."""

    extent_x: float
    extent_y: float
    v_neg: np.ndarray
    v_pos: np.ndarray

    def __post_init__(self) -> None:
        self.v_neg = np.atleast_2d(np.asarray(self.v_neg, dtype=float))
        self.v_pos = np.atleast_2d(np.asarray(self.v_pos, dtype=float))
        if self.v_neg.shape != self.v_pos.shape:
            raise MapLookupError(
                f"Map shapes differ: v_neg {self.v_neg.shape} vs v_pos {self.v_pos.shape}"
            )
        if not (np.all(np.isfinite(self.v_neg)) and np.all(np.isfinite(self.v_pos))):
            raise MapLookupError("Dip maps contain non-finite values")
        if not np.all(self.v_neg < self.v_pos):
            raise MapLookupError("v_neg must lie below v_pos at every pixel")
        if not (self.extent_x > 0 and self.extent_y > 0):
            raise MapLookupError(f"Extents must be positive, got {self.extent_x} x {self.extent_y}")

    @property
    def height(self) -> int:
        return int(self.v_neg.shape[0])

    @property
    def width(self) -> int:
        return int(self.v_neg.shape[1])

    @property
    def pitch_x(self) -> float:
        return self.extent_x / self.width

    @property
    def pitch_y(self) -> float:
        return self.extent_y / self.height

    @classmethod
    def constant(
        cls,
        v_neg: float,
        v_pos: float,
        width: int = 1,
        height: int = 1,
        extent_x: float = 1.0,
        extent_y: float = 1.0,
    ) -> "DipMaps":
        """Uniform maps, e.g. for static-plant experiments."""
        return cls(
            extent_x=extent_x,
            extent_y=extent_y,
            v_neg=np.full((height, width), float(v_neg)),
            v_pos=np.full((height, width), float(v_pos)),
        )

    def pixel_index(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest-pixel (row, col) for positions in A; pixel j spans [j, j+1) pitches."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        outside = (
            (x < -EDGE_TOLERANCE) | (x > self.extent_x + EDGE_TOLERANCE)
            | (y < -EDGE_TOLERANCE) | (y > self.extent_y + EDGE_TOLERANCE)
        )
        if np.any(outside):
            bad = int(np.argmax(outside))
            raise MapLookupError(
                f"Position ({float(x.flat[bad]):.6g}, {float(y.flat[bad]):.6g}) A is outside "
                f"the {self.extent_x} x {self.extent_y} A map"
            )
        col = np.clip(np.floor(x / self.pitch_x).astype(int), 0, self.width - 1)
        row = np.clip(np.floor(y / self.pitch_y).astype(int), 0, self.height - 1)
        return row, col

    def save(self, directory: Union[str, Path]) -> None:
        """Write both matrices and the geometry header."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_matrix(directory / MAP_NEG_FILE, self.v_neg)
        write_matrix(directory / MAP_POS_FILE, self.v_pos)
        write_key_values(directory / MAPS_HEADER, {
            "width": self.width,
            "height": self.height,
            "extent_x": float(self.extent_x),
            "extent_y": float(self.extent_y),
        })

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "DipMaps":
        """Read maps written by save()."""
        directory = Path(directory)
        header_path = directory / MAPS_HEADER
        if not header_path.exists():
            raise MapLookupError(f"No {MAPS_HEADER} in {directory}")
        header = read_key_values(header_path)
        try:
            width, height = int(header["width"]), int(header["height"])
            extent_x, extent_y = float(header["extent_x"]), float(header["extent_y"])
        except (KeyError, ValueError) as e:
            raise MapLookupError(f"{header_path}: incomplete header ({e})") from e
        maps = cls(
            extent_x=extent_x,
            extent_y=extent_y,
            v_neg=read_matrix(directory / MAP_NEG_FILE),
            v_pos=read_matrix(directory / MAP_POS_FILE),
        )
        if (maps.width, maps.height) != (width, height):
            raise MapLookupError(
                f"{directory}: header says {width}x{height}, matrices are {maps.width}x{maps.height}"
            )
        return maps


def map_lookup(maps: DipMaps, x: float, y: float) -> Tuple[float, float]:
    """Dip positions (V_neg, V_pos) of the pixel containing (x, y)."""
    row, col = maps.pixel_index(np.array([x]), np.array([y]))
    r, c = int(row[0]), int(col[0])
    return float(maps.v_neg[r, c]), float(maps.v_pos[r, c])


@dataclass(frozen=True)
class TrajectoryPoint:
    """Tip position at one instant."""

    x: float
    y: float
    line: int
    pass_index: int
    forward: bool
    col: int


@dataclass
class TrajectorySamples:
    """Vectorized trajectory over many instants."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    line: np.ndarray
    pass_index: np.ndarray
    forward: np.ndarray
    col: np.ndarray


class Trajectory:
    """
    Raster trajectory.

    Every line is traversed forward (x from 0 to extent_x) and, for
    back-and-forth scans, backward again. The tip sits at the center row
    of its line. Nominal pass time is scan_time_total / (lines * passes);
    warm-up lines take warmup_slowdown times as long, so the run is longer
    than the nominal scan time by the warm-up excess. The speed profile
    splits each pass into segments of the traversed distance with
    relative speeds, normalized so the pass time is unchanged.
    """

    def __init__(
        self,
        cfg: ScanConfig,
        extent_x: float,
        extent_y: float,
        lines: int,
        pixels_per_line: int,
    ):
        if lines < 1 or pixels_per_line < 1:
            raise TrajectoryError(f"Need at least one line and pixel, got {lines} x {pixels_per_line}")
        self.extent_x = float(extent_x)
        self.extent_y = float(extent_y)
        self.lines = int(lines)
        self.pixels_per_line = int(pixels_per_line)
        self.passes_per_line = 2 if cfg.back_and_forth else 1
        self.nominal_pass_time = cfg.scan_time_total / (self.lines * self.passes_per_line)

        durations = np.full(self.lines * self.passes_per_line, self.nominal_pass_time)
        warmup = min(cfg.warmup_lines, self.lines)
        durations[: warmup * self.passes_per_line] *= cfg.warmup_slowdown
        self.pass_durations = durations
        self.pass_starts = np.concatenate(([0.0], np.cumsum(durations)))
        self.total_time = float(self.pass_starts[-1])

        # speed profile as (distance fraction, time fraction) breakpoints
        segments = cfg.speed_profile or []
        if segments:
            starts = np.array([s.start for s in segments] + [1.0])
            speeds = np.array([s.multiplier for s in segments])
            dwell = np.diff(starts) / speeds
            self._dist_knots = starts
            self._time_knots = np.concatenate(([0.0], np.cumsum(dwell) / dwell.sum()))
        else:
            self._dist_knots = np.array([0.0, 1.0])
            self._time_knots = np.array([0.0, 1.0])

    @classmethod
    def for_maps(cls, cfg: ScanConfig, maps: DipMaps) -> "Trajectory":
        """Trajectory covering the maps' extent; lines/pixels default to the map grid."""
        return cls(
            cfg,
            extent_x=maps.extent_x,
            extent_y=maps.extent_y,
            lines=cfg.lines or maps.height,
            pixels_per_line=cfg.pixels_per_line or maps.width,
        )

    @property
    def pass_count(self) -> int:
        return len(self.pass_durations)

    def line_start_time(self, line: int) -> float:
        return float(self.pass_starts[line * self.passes_per_line])

    def sample(self, times: np.ndarray) -> TrajectorySamples:
        """Positions at many instants; t == total_time maps to the end of the last pass."""
        t = np.asarray(times, dtype=float)
        if np.any(t < 0) or np.any(t > self.total_time):
            raise TrajectoryError(
                f"Time outside the scan [0, {self.total_time:.6g}] s: "
                f"[{float(t.min()):.6g}, {float(t.max()):.6g}]"
            )
        k = np.searchsorted(self.pass_starts, t, side="right") - 1
        k = np.clip(k, 0, self.pass_count - 1)
        u = (t - self.pass_starts[k]) / self.pass_durations[k]
        u = np.clip(u, 0.0, 1.0)
        s = np.interp(u, self._time_knots, self._dist_knots)

        line = k // self.passes_per_line
        forward = (k % self.passes_per_line) == 0
        x = np.where(forward, s, 1.0 - s) * self.extent_x
        y = (line + 0.5) * (self.extent_y / self.lines)
        pitch_x = self.extent_x / self.pixels_per_line
        col = np.clip(np.floor(x / pitch_x).astype(int), 0, self.pixels_per_line - 1)
        return TrajectorySamples(
            t=t, x=x, y=y, line=line, pass_index=k, forward=forward, col=col,
        )

    def position(self, t: float) -> TrajectoryPoint:
        s = self.sample(np.array([t]))
        return TrajectoryPoint(
            x=float(s.x[0]),
            y=float(s.y[0]),
            line=int(s.line[0]),
            pass_index=int(s.pass_index[0]),
            forward=bool(s.forward[0]),
            col=int(s.col[0]),
        )


def trajectory_position(
    cfg: ScanConfig,
    t: float,
    extent_x: float,
    extent_y: float,
    lines: int,
    pixels_per_line: int,
) -> TrajectoryPoint:
    """Tip position, pixel and direction at time t."""
    return Trajectory(cfg, extent_x, extent_y, lines, pixels_per_line).position(t)


def pll_alpha(omega_pll: float, t_s: float) -> float:
    """Pole of the exactly discretized first-order PLL; 0 for an infinitely fast PLL."""
    return math.exp(-omega_pll * t_s)


@dataclass
class PlantState:
    """Mutable plant state."""

    pll_y: float
    t: float = 0.0
    step: int = 0
    rng: Optional[np.random.Generator] = None
    _noise: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    _noise_pos: int = 0

    def next_noise(self, sigma: float) -> float:
        if sigma == 0.0 or self.rng is None:
            return 0.0
        if self._noise_pos >= len(self._noise):
            self._noise = self.rng.standard_normal(NOISE_BLOCK)
            self._noise_pos = 0
        value = float(self._noise[self._noise_pos])
        self._noise_pos += 1
        return sigma * value


class SqdmPlant:
    """
    Spectrum, PLL and noise.

    output() is the hot path for a caller that already knows the dip
    positions under the tip; step() also advances time along a trajectory.
    """

    def __init__(
        self,
        spectrum: SpectrumParams,
        plant: PlantParams,
        t_s: float,
        seed: Optional[Union[int, np.random.SeedSequence]] = None,
        pll_y0: Optional[float] = None,
    ):
        self.spectrum = spectrum
        self.params = plant
        self.t_s = t_s
        self.alpha = pll_alpha(plant.omega_pll, t_s)
        self.sigma_n = plant.sigma_n
        self._kernel = SpectrumKernel(spectrum)
        self.state = PlantState(
            pll_y=0.0 if pll_y0 is None else float(pll_y0),
            rng=np.random.default_rng(seed),
        )
        self._primed = pll_y0 is not None

    def static_value(self, v_b: float, v_neg: float, v_pos: float) -> float:
        return self._kernel.value(v_b, v_neg, v_pos)

    def output(self, v_b_mod: float, v_neg: float, v_pos: float) -> float:
        """One sample: PLL update towards the static spectrum, then noise."""
        target = self._kernel.value(v_b_mod, v_neg, v_pos)
        state = self.state
        if not self._primed:
            # PLL starts locked to the first operating point
            state.pll_y = target
            self._primed = True
        else:
            state.pll_y = self.alpha * state.pll_y + (1.0 - self.alpha) * target
        state.t += self.t_s
        state.step += 1
        return state.pll_y + state.next_noise(self.sigma_n)

    def step(self, v_b_mod: float, maps: DipMaps, trajectory: Trajectory) -> float:
        """Sample at the current time's tip position and advance by T_s."""
        point = trajectory.position(min(self.state.t, trajectory.total_time))
        v_neg, v_pos = map_lookup(maps, point.x, point.y)
        return self.output(v_b_mod, v_neg, v_pos)


def plant_step(
    plant: SqdmPlant,
    maps: DipMaps,
    trajectory: Trajectory,
    v_b_mod: float,
) -> Tuple[PlantState, float]:
    """Advance the plant by one sample; returns the (updated) state and the measurement."""
    measurement = plant.step(v_b_mod, maps, trajectory)
    return plant.state, measurement
