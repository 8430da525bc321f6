"""
Tests for SQDM Pydantic models.
"""

import math
import tempfile
from pathlib import Path

import pytest
from pydantic import ValidationError

from backend.sqdm.errors import ConfigError
from backend.sqdm.models import (
    ControllerKind,
    DipSelector,
    EscConfig,
    RunConfig,
    SampleSpec,
    ScanConfig,
    SpectrumParams,
    SweepConfig,
    default_esc_gain,
    default_stc_gain,
    default_stc_rho,
    flatten_dotted,
    unflatten_dotted,
)


class TestSpectrumParams:
    """Tests for SpectrumParams model."""

    def test_defaults(self):
        """Test the measured-tip parameter set is the default."""
        params = SpectrumParams()
        assert params.p1 == -1.3
        assert params.d_pos == -4.6
        assert params.w_neg == 0.022
        assert params.a3 == 1.64

    def test_dip_shape(self):
        """Test selecting a dip."""
        params = SpectrumParams()
        assert params.dip(DipSelector.NEGATIVE) == (-1.1, -1.3, 0.022)
        assert params.dip("pos").center == 4.3

    def test_width_must_be_positive(self):
        """Test zero width is rejected."""
        with pytest.raises(ValidationError):
            SpectrumParams(w_neg=0.0)

    def test_depth_must_not_be_positive(self):
        """Test upward dips are rejected."""
        with pytest.raises(ValidationError):
            SpectrumParams(d_neg=0.5)

    def test_zero_depth_allowed(self):
        """Test a flat dip is a valid parameter set."""
        assert SpectrumParams(d_neg=0.0).d_neg == 0.0

    def test_dip_order(self):
        """Test the negative dip must sit left of the positive dip."""
        with pytest.raises(ValidationError):
            SpectrumParams(v_neg=5.0, v_pos=4.3)

    def test_extra_field_rejected(self):
        """Test unknown keys are rejected."""
        with pytest.raises(ValidationError):
            SpectrumParams(c1=1.0)

    def test_frozen(self):
        """Test parameter sets are immutable."""
        params = SpectrumParams()
        with pytest.raises(ValidationError):
            params.p1 = 0.0

    def test_with_dip_centers(self):
        """Test moving both dips keeps the parabola."""
        moved = SpectrumParams().with_dip_centers(-1.4, 4.1)
        assert moved.v_neg == -1.4
        assert moved.v_pos == 4.1
        assert moved.p2 == 0.56

    def test_scaled(self):
        """Test scaling depths and widths."""
        scaled = SpectrumParams().scaled(depth_scale=2.0, width_scale=4.0)
        assert scaled.d_neg == pytest.approx(-2.2)
        assert scaled.d_pos == pytest.approx(-9.2)
        assert scaled.w_neg == pytest.approx(0.088)
        assert scaled.v_neg == -1.3

    def test_text_round_trip(self):
        """Test the name = value file format."""
        params = SpectrumParams(p1=-1.25, w_pos=0.09)
        assert SpectrumParams.from_text(params.to_text()) == params

    def test_from_text_comments_and_partial(self):
        """Test comments are skipped and missing keys keep defaults."""
        params = SpectrumParams.from_text("# tip 3\n\nd_neg = -0.9  # fitted\n")
        assert params.d_neg == -0.9
        assert params.d_pos == -4.6

    def test_from_text_bad_line(self):
        """Test malformed lines raise ConfigError."""
        with pytest.raises(ConfigError):
            SpectrumParams.from_text("p1 -1.3")
        with pytest.raises(ConfigError):
            SpectrumParams.from_text("p1 = abc")

    def test_file_round_trip(self):
        """Test saving and loading a spectrum file."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "tip.txt"
            SpectrumParams(a1=0.8).to_file(path)
            assert SpectrumParams.from_file(path).a1 == 0.8


class TestSampleSpec:
    """Tests for SampleSpec model."""

    def test_defaults(self):
        """Test the default grid and variation."""
        spec = SampleSpec()
        assert (spec.width, spec.height) == (200, 200)
        assert spec.total_variation_mv == 190.5
        assert spec.pitch_x == pytest.approx(3.0)

    def test_delta_v0_positive(self):
        """Test the dip separation must be positive."""
        with pytest.raises(ValidationError):
            SampleSpec(delta_v0=0.0)

    def test_blob_needs_positive_sigma(self):
        """Test blob widths are validated."""
        with pytest.raises(ValidationError):
            SampleSpec(blobs=[{"x": 0, "y": 0, "sigma_x": 0, "sigma_y": 1, "amplitude_mv": 10}])


class TestScanConfig:
    """Tests for ScanConfig model."""

    def test_defaults(self):
        """Test nominal scan settings."""
        cfg = ScanConfig()
        assert cfg.scan_time_total == 7200.0
        assert cfg.t_s == 0.005
        assert cfg.back_and_forth is True
        assert cfg.controller is ControllerKind.STC

    def test_speed_profile_must_start_at_zero(self):
        """Test the first speed segment starts the line."""
        with pytest.raises(ValidationError):
            ScanConfig(speed_profile=[{"start": 0.5, "multiplier": 2.0}])

    def test_speed_profile_increasing(self):
        """Test segment starts must increase."""
        with pytest.raises(ValidationError):
            ScanConfig(speed_profile=[
                {"start": 0.0, "multiplier": 1.0},
                {"start": 0.5, "multiplier": 2.0},
                {"start": 0.5, "multiplier": 3.0},
            ])

    def test_t_s_positive(self):
        """Test the sample time must be positive."""
        with pytest.raises(ValidationError):
            ScanConfig(t_s=0.0)


class TestControllerConfigs:
    """Tests for controller configuration models."""

    def test_esc_zero_gain_rejected(self):
        """Test a zero ESC gain is rejected."""
        with pytest.raises(ValidationError):
            EscConfig(k=0.0)

    def test_default_gains(self):
        """Test per-dip default gains."""
        assert default_esc_gain(DipSelector.NEGATIVE) == -5e-5
        assert default_esc_gain(DipSelector.POSITIVE) == -6e-5
        assert default_stc_gain(DipSelector.NEGATIVE) == 0.04
        assert default_stc_gain(DipSelector.POSITIVE) == -0.003
        assert default_stc_rho(DipSelector.NEGATIVE) == 0.63


class TestSweepConfig:
    """Tests for SweepConfig model."""

    def test_no_axes(self):
        """Test an unconfigured sweep has no axes."""
        assert SweepConfig().axes() == {}

    def test_axes_order(self):
        """Test axes come back in a fixed order."""
        sweep = SweepConfig(ff=[True, False], scan_time_scale=[1.0, 2.0])
        assert list(sweep.axes()) == ["scan_time_scale", "ff"]

    def test_empty_axis_rejected(self):
        """Test an explicitly empty axis is an error."""
        with pytest.raises(ValidationError):
            SweepConfig(scan_time_scale=[])

    def test_negative_scale_rejected(self):
        """Test scale factors must be positive."""
        with pytest.raises(ValidationError):
            SweepConfig(depth_scale=[1.0, -2.0])

    def test_regain_duration(self):
        """Test the regain run must outlast the shift time."""
        with pytest.raises(ValidationError):
            SweepConfig(regain_shift_time=10.0, regain_duration=5.0)


class TestRunConfig:
    """Tests for RunConfig model."""

    def test_seed_required(self):
        """Test the seed has no default."""
        with pytest.raises(ValidationError):
            RunConfig()

    def test_seed_non_negative(self):
        """Test negative seeds are rejected."""
        with pytest.raises(ValidationError):
            RunConfig(seed=-1)

    def test_dip_follows_controller(self):
        """Test the tracked dip comes from the active controller section."""
        config = RunConfig.from_dict({
            "seed": 1,
            "scan.controller": "esc",
            "esc.dip": "pos",
            "stc.dip": "neg",
        })
        assert config.dip is DipSelector.POSITIVE

    def test_from_dict_flat_and_nested(self):
        """Test dotted keys and nested sections mix."""
        config = RunConfig.from_dict({
            "seed": 3,
            "scan.t_s": 0.01,
            "plant": {"sigma_n": 0.0},
        })
        assert config.scan.t_s == 0.01
        assert config.plant.sigma_n == 0.0

    def test_unknown_key_rejected(self):
        """Test a misspelt key is an error."""
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"seed": 1, "scan.scan_tme": 5})

    def test_yaml_round_trip(self):
        """Test writing and reading a flat YAML config."""
        config = RunConfig.from_dict({
            "seed": 11,
            "scan.speed_profile": [{"start": 0.0, "multiplier": 1.0}, {"start": 0.5, "multiplier": 2.0}],
            "sample.blobs": [{"x": 1, "y": 2, "sigma_x": 3, "sigma_y": 4, "amplitude_mv": 5}],
            "sweep.ff": [True, False],
        })
        assert RunConfig.from_yaml(config.to_yaml()) == config

    def test_infinite_pll_survives_round_trip(self):
        """Test an infinite PLL bandwidth is kept in the flat form."""
        config = RunConfig(seed=1).with_overrides({"plant.omega_pll": math.inf})
        flat = config.to_flat_dict()
        assert math.isinf(flat["plant.omega_pll"])
        assert RunConfig.from_dict(flat).plant.omega_pll == math.inf

    def test_flat_dict_uses_enum_values(self):
        """Test enums are flattened to their values."""
        flat = RunConfig(seed=1).to_flat_dict()
        assert flat["scan.controller"] == "stc"
        assert flat["esc.dip"] == "neg"
        assert flat["seed"] == 1

    def test_with_overrides(self):
        """Test overrides are re-validated."""
        config = RunConfig(seed=1)
        updated = config.with_overrides({"ff.enabled": False, "sample.width": 16})
        assert updated.ff.enabled is False
        assert updated.sample.width == 16
        assert config.ff.enabled is True
        with pytest.raises(ValidationError):
            config.with_overrides({"sample.width": 0})

    def test_with_no_overrides_returns_self(self):
        """Test an empty override set is a no-op."""
        config = RunConfig(seed=1)
        assert config.with_overrides({}) is config

    def test_spectrum_file_reference(self):
        """Test spectrum.file loads a spectrum file relative to the config."""
        with tempfile.TemporaryDirectory() as tmpdir:
            SpectrumParams(d_neg=-0.8).to_file(Path(tmpdir) / "tip.txt")
            path = Path(tmpdir) / "run.yaml"
            path.write_text("seed: 5\nspectrum.file: tip.txt\nspectrum.w_neg: 0.03\n", encoding="utf-8")
            config = RunConfig.from_file(path)
            assert config.spectrum.d_neg == -0.8
            assert config.spectrum.w_neg == 0.03

    def test_file_must_be_mapping(self):
        """Test a YAML list is not a config."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "run.yaml"
            path.write_text("- 1\n- 2\n", encoding="utf-8")
            with pytest.raises(ConfigError):
                RunConfig.from_file(path)


class TestDottedKeys:
    """Tests for dotted key helpers."""

    def test_flatten(self):
        """Test nested sections become dotted keys."""
        assert flatten_dotted({"a": {"b": 1, "c": {"d": 2}}, "e": [1]}) == {"a.b": 1, "a.c.d": 2, "e": [1]}

    def test_unflatten(self):
        """Test dotted keys become nested sections."""
        assert unflatten_dotted({"a.b": 1, "a.c": 2, "d": 3}) == {"a": {"b": 1, "c": 2}, "d": 3}

    def test_conflict(self):
        """Test a scalar and a section under the same name conflict."""
        with pytest.raises(ConfigError):
            unflatten_dotted({"a": 1, "a.b": 2})
