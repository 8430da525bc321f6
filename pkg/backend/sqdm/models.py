"""
Pydantic models for SQDM runs.

This module defines the parameter and configuration models shared by the
simulator, the controllers and the CLI:
- SpectrumParams: analytic frequency-shift spectrum (parabola plus two dips)
- SampleSpec: synthetic ground-truth potential surfaces
- PlantParams / ScanConfig: plant dynamics and raster trajectory
- EscConfig / StcConfig / FeedforwardConfig: controller settings
- SweepConfig: parameter sweeps and the regain experiment
- RunConfig: everything above plus the master seed
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Union

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from .errors import ConfigError


# Enums for constrained string fields

class DipSelector(str, Enum):
    """Which charging dip of the spectrum is tracked."""
    NEGATIVE = "neg"
    POSITIVE = "pos"


class ControllerKind(str, Enum):
    """Feedback controller used for a dip run."""
    ESC = "esc"
    STC = "stc"


class PotentialMode(str, Enum):
    """How a potential surface is realized through the two dips."""
    SHIFT_NEG_ONLY = "shift_neg_only"
    SPLIT = "split"


class DipShape(NamedTuple):
    """Depth (Hz), center (V) and width (V) of one dip."""
    depth: float
    center: float
    width: float


# Model definitions

class SpectrumParams(BaseModel):
    """
    Frequency-shift spectrum Delta f(V_b).

    Parabola p1*V^2 + p2*V + p3, a Gaussian negative dip and a positive dip
    shaped by exp(-g(x)) with g(x) = a1*x^2 + a2*x^4 + a3*x^6. Defaults are
    a fit to a measured tip.
    """

    p1: float = Field(default=-1.3, description="Parabola coefficient (Hz/V^2)")
    p2: float = Field(default=0.56, description="Parabola coefficient (Hz/V)")
    p3: float = Field(default=-0.76, description="Parabola offset (Hz)")
    d_neg: float = Field(default=-1.1, description="Negative dip depth (Hz)")
    d_pos: float = Field(default=-4.6, description="Positive dip depth (Hz)")
    v_neg: float = Field(default=-1.3, description="Negative dip position (V)")
    v_pos: float = Field(default=4.3, description="Positive dip position (V)")
    w_neg: float = Field(default=0.022, description="Negative dip width (V)")
    w_pos: float = Field(default=0.087, description="Positive dip width (V)")
    a1: float = Field(default=0.70, description="g(x) coefficient of x^2")
    a2: float = Field(default=-0.61, description="g(x) coefficient of x^4")
    a3: float = Field(default=1.64, description="g(x) coefficient of x^6")

    class Config:
        extra = "forbid"
        frozen = True

    @field_validator("w_neg", "w_pos")
    @classmethod
    def validate_width(cls, v: float) -> float:
        """Dip widths must be positive."""
        if not v > 0:
            raise ValueError(f"Dip width must be positive, got: {v}")
        return v

    @field_validator("d_neg", "d_pos")
    @classmethod
    def validate_depth(cls, v: float) -> float:
        """Dips point downwards; zero disables a dip."""
        if v > 0:
            raise ValueError(f"Dip depth must be <= 0, got: {v}")
        return v

    @model_validator(mode="after")
    def validate_order(self) -> "SpectrumParams":
        """The negative dip sits left of the positive dip."""
        if not self.v_neg < self.v_pos:
            raise ValueError(
                f"v_neg ({self.v_neg}) must be smaller than v_pos ({self.v_pos})"
            )
        return self

    def dip(self, which: DipSelector) -> DipShape:
        """Return the shape of the selected dip."""
        if DipSelector(which) is DipSelector.NEGATIVE:
            return DipShape(self.d_neg, self.v_neg, self.w_neg)
        return DipShape(self.d_pos, self.v_pos, self.w_pos)

    def with_dip_centers(self, v_neg: float, v_pos: float) -> "SpectrumParams":
        """Copy with both dips moved, parabola untouched."""
        return self.model_copy(update={"v_neg": float(v_neg), "v_pos": float(v_pos)})

    def scaled(self, depth_scale: float = 1.0, width_scale: float = 1.0) -> "SpectrumParams":
        """Copy with both dips deepened and widened by the given factors."""
        return SpectrumParams(**{
            **self.model_dump(),
            "d_neg": self.d_neg * depth_scale,
            "d_pos": self.d_pos * depth_scale,
            "w_neg": self.w_neg * width_scale,
            "w_pos": self.w_pos * width_scale,
        })

    def to_text(self) -> str:
        """Serialize as `name = value` lines."""
        return "".join(f"{name} = {value!r}\n" for name, value in self.model_dump().items())

    @classmethod
    def from_text(cls, text: str) -> "SpectrumParams":
        """Parse `name = value` lines; blank lines and # comments are skipped."""
        values: Dict[str, float] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'name = value', got: {raw!r}")
            name, value = (part.strip() for part in line.split("=", 1))
            try:
                values[name] = float(value)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: {name} is not a number: {value!r}") from e
        return cls(**values)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "SpectrumParams":
        """Load from a `name = value` text file."""
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_file(self, path: Union[str, Path]) -> None:
        """Save as a `name = value` text file."""
        Path(path).write_text(self.to_text(), encoding="utf-8")


class Blob(BaseModel):
    """2-D Gaussian feature of a synthetic potential surface."""

    x: float = Field(..., description="Center x (A)")
    y: float = Field(..., description="Center y (A)")
    sigma_x: float = Field(..., gt=0, description="Width along x (A)")
    sigma_y: float = Field(..., gt=0, description="Width along y (A)")
    amplitude_mv: float = Field(..., description="Peak value (mV)")

    class Config:
        extra = "forbid"


class SampleSpec(BaseModel):
    """Synthetic ground truth: grid, features and reference points."""

    width: int = Field(default=200, ge=1, description="Pixels per line")
    height: int = Field(default=200, ge=1, description="Number of lines")
    extent_x: float = Field(default=600.0, gt=0, description="Scan width (A)")
    extent_y: float = Field(default=600.0, gt=0, description="Scan height (A)")
    blobs: List[Blob] = Field(default_factory=list, description="Explicit features")
    random_blobs: int = Field(
        default=6, ge=0,
        description="Features drawn from the seed when no explicit blobs are given"
    )
    ramp_x: float = Field(default=0.0, description="Linear background (mV per A)")
    ramp_y: float = Field(default=0.0, description="Linear background (mV per A)")
    v_neg0: float = Field(default=-1.3, description="Reference negative dip position (V)")
    delta_v0: float = Field(default=5.6, gt=0, description="Reference dip separation (V)")
    total_variation_mv: Optional[float] = Field(
        default=190.5, gt=0,
        description="Peak-to-peak target after rescaling; None keeps raw amplitudes"
    )
    mode: PotentialMode = Field(default=PotentialMode.SHIFT_NEG_ONLY)
    split_fraction: float = Field(
        default=0.5, ge=0.0, le=1.0,
        description="Share of the potential carried by the dip separation in split mode"
    )
    maps_dir: Optional[str] = Field(
        default=None, description="Load dip maps from this directory instead of generating"
    )

    class Config:
        extra = "forbid"

    @property
    def pitch_x(self) -> float:
        return self.extent_x / self.width

    @property
    def pitch_y(self) -> float:
        return self.extent_y / self.height


class PlantParams(BaseModel):
    """PLL bandwidth and measurement noise."""

    omega_pll: float = Field(default=10.0, gt=0, description="PLL bandwidth (1/s); inf disables the PLL")
    sigma_n: float = Field(default=0.03, ge=0, description="Output noise std (Hz)")

    class Config:
        extra = "forbid"


class SpeedSegment(BaseModel):
    """Speed multiplier applied from a fraction of the traversed line onwards."""

    start: float = Field(..., ge=0.0, lt=1.0, description="Fraction of the line where the segment starts")
    multiplier: float = Field(..., gt=0, description="Relative speed")

    class Config:
        extra = "forbid"


class ScanConfig(BaseModel):
    """Raster trajectory, sample time and run supervision."""

    scan_time_total: float = Field(default=7200.0, gt=0, description="Nominal scan time per dip (s)")
    t_s: float = Field(default=0.005, gt=0, description="Sample time (s)")
    lines: Optional[int] = Field(default=None, ge=1, description="Lines; defaults to the map height")
    pixels_per_line: Optional[int] = Field(default=None, ge=1, description="Pixels; defaults to the map width")
    back_and_forth: bool = Field(default=True, description="Scan every line forward and backward")
    speed_profile: List[SpeedSegment] = Field(default_factory=list)
    warmup_lines: int = Field(default=0, ge=0, description="Lines scanned before nominal speed")
    warmup_slowdown: float = Field(default=1.0, ge=1.0, description="Time factor of warm-up lines")
    controller: ControllerKind = Field(default=ControllerKind.STC)
    dip_loss_widths: float = Field(default=3.0, gt=0, description="Dip window half-width in dip widths")
    dip_loss_time: float = Field(default=1.0, gt=0, description="Time outside the window that counts as loss (s)")
    stop_on_dip_loss: bool = Field(default=True)

    class Config:
        extra = "forbid"

    @field_validator("speed_profile")
    @classmethod
    def validate_profile(cls, v: List[SpeedSegment]) -> List[SpeedSegment]:
        """Segments are ordered and the first one starts the line."""
        if not v:
            return v
        starts = [segment.start for segment in v]
        if starts[0] != 0.0:
            raise ValueError("The first speed segment must start at 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"Speed segment starts must increase, got: {starts}")
        return v


class EscConfig(BaseModel):
    """Extremum seeking settings; frequencies relative to omega_PLL / omega_d."""

    dip: DipSelector = Field(default=DipSelector.NEGATIVE)
    a_d: float = Field(default=1e-3, gt=0, description="Dither amplitude (V)")
    omega_d_rel: float = Field(default=4.0, gt=0, description="Dither frequency / omega_PLL")
    omega_L_rel: float = Field(default=0.2, gt=0, description="Low-pass cutoff / omega_d")
    omega_H_rel: float = Field(default=3.0, gt=0, description="High-pass cutoff / omega_d")
    k: Optional[float] = Field(default=None, description="Tunable gain; default depends on the dip")
    k_scale_by_pll: bool = Field(
        default=True,
        description="k is quoted against 1/(iw+w_PLL) and is multiplied by omega_PLL"
    )

    class Config:
        extra = "forbid"

    @field_validator("k")
    @classmethod
    def validate_k(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v == 0:
            raise ValueError("ESC gain k must be non-zero")
        return v


class StcConfig(BaseModel):
    """Slope tracking settings."""

    dip: DipSelector = Field(default=DipSelector.NEGATIVE)
    rho: Optional[float] = Field(default=None, gt=0, lt=1, description="Depth fraction of the reference")
    K: Optional[float] = Field(default=None, description="Integral gain; default depends on the dip")
    compensate: bool = Field(default=True, description="Remove the systematic error when imaging")

    class Config:
        extra = "forbid"


class FeedforwardConfig(BaseModel):
    """Previous-line feedforward."""

    enabled: bool = Field(default=True)
    enabled_after_lines: int = Field(default=1, ge=1)
    window_n: int = Field(default=5, ge=1, description="Mean filter window length")
    window_time: Optional[float] = Field(
        default=1.0, gt=0, description="Mean filter window in seconds of the previous line; widens window_n"
    )
    correct_tracking_error: bool = Field(
        default=True, description="Buffer the operating point estimated from the controller error"
    )

    class Config:
        extra = "forbid"


class SweepConfig(BaseModel):
    """Sweep axes and regain experiment settings."""

    experiment: Literal["scan", "regain"] = Field(default="scan")
    scan_time_scale: Optional[List[float]] = Field(default=None)
    depth_scale: Optional[List[float]] = Field(default=None)
    width_scale: Optional[List[float]] = Field(default=None)
    ff: Optional[List[bool]] = Field(default=None)
    regain_k: float = Field(default=-1e-5, description="ESC gain of the regain experiment")
    regain_shift_time: float = Field(default=10.0, gt=0)
    regain_duration: float = Field(default=60.0, gt=0)
    regain_tolerance: Optional[float] = Field(default=None, gt=0, description="Defaults to a_d")

    class Config:
        extra = "forbid"

    @field_validator("scan_time_scale", "depth_scale", "width_scale", "ff")
    @classmethod
    def validate_axis(cls, v: Optional[list]) -> Optional[list]:
        if v is not None and len(v) == 0:
            raise ValueError("Sweep axis must not be empty")
        return v

    @field_validator("scan_time_scale", "depth_scale", "width_scale")
    @classmethod
    def validate_scales(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and any(s <= 0 for s in v):
            raise ValueError(f"Scale factors must be positive, got: {v}")
        return v

    @model_validator(mode="after")
    def validate_regain(self) -> "SweepConfig":
        if self.regain_duration <= self.regain_shift_time:
            raise ValueError("regain_duration must exceed regain_shift_time")
        return self

    def axes(self) -> Dict[str, list]:
        """Non-empty axes in a fixed order."""
        names = ("scan_time_scale", "depth_scale", "width_scale", "ff")
        return {name: getattr(self, name) for name in names if getattr(self, name) is not None}


class RunConfig(BaseModel):
    """
    Complete run configuration.

    The seed is mandatory so every artifact is reproducible.
    """

    seed: int = Field(..., ge=0, description="Master seed")
    variant: Optional[int] = Field(default=None, ge=0, description="Sweep variant index; selects the variant noise stream")
    spectrum: SpectrumParams = Field(default_factory=SpectrumParams)
    sample: SampleSpec = Field(default_factory=SampleSpec)
    plant: PlantParams = Field(default_factory=PlantParams)
    scan: ScanConfig = Field(default_factory=ScanConfig)
    esc: EscConfig = Field(default_factory=EscConfig)
    stc: StcConfig = Field(default_factory=StcConfig)
    ff: FeedforwardConfig = Field(default_factory=FeedforwardConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    class Config:
        extra = "forbid"

    @property
    def dip(self) -> DipSelector:
        """Dip tracked by the selected controller."""
        if self.scan.controller is ControllerKind.ESC:
            return self.esc.dip
        return self.stc.dip

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Path] = None) -> "RunConfig":
        """Build from flat dotted keys or nested sections."""
        nested = unflatten_dotted(data)
        spectrum = nested.get("spectrum")
        if isinstance(spectrum, dict) and "file" in spectrum:
            path = Path(spectrum.pop("file"))
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            loaded = SpectrumParams.from_file(path).model_dump()
            loaded.update(spectrum)
            nested["spectrum"] = loaded
        return cls.model_validate(nested)

    @classmethod
    def from_yaml(cls, yaml_content: str) -> "RunConfig":
        """Parse YAML text."""
        data = yaml.safe_load(yaml_content) or {}
        if not isinstance(data, dict):
            raise ConfigError("Config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Load a YAML config file."""
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(data, base_dir=path.parent)

    def to_flat_dict(self) -> Dict[str, Any]:
        """Dotted-key view, as written to config files and manifests."""
        return flatten_dotted(_plain(self.model_dump()))

    def to_yaml(self) -> str:
        return yaml.dump(self.to_flat_dict(), default_flow_style=None, sort_keys=False)

    def to_file(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_yaml(), encoding="utf-8")

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with dotted-key overrides applied and re-validated."""
        if not overrides:
            return self
        flat = self.to_flat_dict()
        flat.update(overrides)
        return RunConfig.from_dict(flat)


def _plain(value: Any) -> Any:
    """Enums to their values, recursively; floats (including inf) untouched."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def flatten_dotted(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Flatten nested sections into dotted keys; lists stay values."""
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_dotted(value, prefix=f"{name}."))
        else:
            flat[name] = value
    return flat


def unflatten_dotted(data: Dict[str, Any]) -> Dict[str, Any]:
    """Expand dotted keys into nested sections."""
    nested: Dict[str, Any] = {}
    for key, value in data.items():
        parts = str(key).split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"Key '{key}' conflicts with scalar '{part}'")
            node = child
        leaf = parts[-1]
        if isinstance(value, dict):
            existing = node.setdefault(leaf, {})
            if not isinstance(existing, dict):
                raise ConfigError(f"Key '{key}' conflicts with an existing value")
            existing.update(unflatten_dotted(value))
        else:
            node[leaf] = value
    return nested


def default_esc_gain(dip: DipSelector) -> float:
    """Default ESC gain per dip."""
    return -5e-5 if DipSelector(dip) is DipSelector.NEGATIVE else -6e-5


def default_stc_gain(dip: DipSelector) -> float:
    """Default STC gain per dip; the signs follow the inner-slope slopes."""
    return 0.04 if DipSelector(dip) is DipSelector.NEGATIVE else -0.003


def default_stc_rho(dip: DipSelector) -> float:
    """Depth fraction placing the reference about one width from the minimum."""
    return 0.63 if DipSelector(dip) is DipSelector.NEGATIVE else 0.59