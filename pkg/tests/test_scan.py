"""
Tests for closed-loop scans, sweeps and the regain experiment.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from backend.sqdm import scan as scan_module
from backend.sqdm.artifacts import read_key_values
from backend.sqdm.errors import ConfigError
from backend.sqdm.imaging import RECORD_COLUMNS, per_line_rms
from backend.sqdm.manifest import RunManifest
from backend.sqdm.models import ControllerKind, DipSelector, RunConfig, SpectrumParams
from backend.sqdm.plant import DipMaps
from backend.sqdm.samplegen import TRUTH_FILE
from backend.sqdm.scan import (
    ScanRunner,
    apply_variant,
    load_sample,
    noise_seed,
    regain_experiment,
    run_scan,
    run_sweep,
    run_two_dip,
    sample_seed,
    throughput,
    write_sample,
)
from backend.sqdm.spectrum import true_dip_minimum
from backend.sqdm.stc import systematic_error


def bowl_sample(width, height, extent_x, extent_y, total_variation_mv=190.5):
    """
    Centered depression over a y-ramp.

    The first pixel lands inside the potential range, so the slope
    tracking reference stays reachable across the whole map.
    """
    return {
        "sample.width": width,
        "sample.height": height,
        "sample.extent_x": extent_x,
        "sample.extent_y": extent_y,
        "sample.blobs": [{
            "x": extent_x / 2,
            "y": extent_y / 2,
            "sigma_x": 0.3125 * extent_x,
            "sigma_y": 0.3125 * extent_y,
            "amplitude_mv": -120.0,
        }],
        "sample.ramp_y": round(134.4 / extent_y, 6),
        "sample.total_variation_mv": total_variation_mv,
    }


def ramp_sample(ramp_x, lines=4):
    """Pure x-ramp over 16 px x `lines` lines at a 3 A pitch."""
    return {
        "sample.width": 16,
        "sample.height": lines,
        "sample.extent_x": 48.0,
        "sample.extent_y": 3.0 * lines,
        "sample.random_blobs": 0,
        "sample.ramp_x": ramp_x,
        "sample.total_variation_mv": None,
    }


def make_config(seed=42, **overrides):
    return RunConfig(seed=seed).with_overrides(overrides)


def tiny_config(**overrides):
    """8x8 px, 4 s passes, gentle features."""
    return make_config(**{
        **bowl_sample(8, 8, 24.0, 24.0, total_variation_mv=40.0),
        "scan.scan_time_total": 64.0,
        **overrides,
    })


def within_fraction(result, tolerance):
    error = np.abs(result.image.values - result.sample.phi_star)
    return float(np.mean(error <= tolerance))


class TestSeeds:
    """Tests for the seed tree."""

    def test_sample_seed(self):
        """Test the sample draws from its own branch."""
        assert sample_seed(5).spawn_key == (0,)
        assert sample_seed(5).entropy == 5

    def test_noise_seed(self):
        """Test dips and sweep variants get separate streams."""
        assert noise_seed(5, DipSelector.NEGATIVE).spawn_key == (1, 0)
        assert noise_seed(5, "pos").spawn_key == (1, 1)
        assert noise_seed(5, "pos", variant=3).spawn_key == (2, 3, 1)


class TestLoadSample:
    """Tests for load_sample and write_sample."""

    def test_generated_from_seed(self):
        """Test the synthetic sample is reproducible."""
        a = load_sample(tiny_config())
        b = load_sample(tiny_config())
        np.testing.assert_array_equal(a.phi_star, b.phi_star)
        assert a.maps.width == 8
        assert float(np.ptp(a.phi_star)) == pytest.approx(0.040)

    def test_maps_dir(self):
        """Test maps and truth are read back from a directory."""
        sample = load_sample(tiny_config())
        with tempfile.TemporaryDirectory() as tmpdir:
            files = write_sample(sample, tmpdir)
            assert (Path(tmpdir) / TRUTH_FILE).exists()
            assert TRUTH_FILE in files
            loaded = load_sample(tiny_config(**{"sample.maps_dir": tmpdir}))
        np.testing.assert_array_equal(loaded.maps.v_neg, sample.maps.v_neg)
        np.testing.assert_array_equal(loaded.phi_star, sample.phi_star)

    def test_maps_dir_without_truth(self):
        """Test the potential is recomputed from the maps when no truth is stored."""
        sample = load_sample(tiny_config())
        with tempfile.TemporaryDirectory() as tmpdir:
            write_sample(sample, tmpdir)
            (Path(tmpdir) / TRUTH_FILE).unlink()
            loaded = load_sample(tiny_config(**{"sample.maps_dir": tmpdir}))
        np.testing.assert_allclose(loaded.phi_star, sample.phi_star, rtol=0, atol=1e-12)


class TestScanRunner:
    """Tests for ScanRunner on uniform maps."""

    @staticmethod
    def runner(kind):
        maps = DipMaps.constant(-1.3, 4.3, width=4, height=2, extent_x=12.0, extent_y=6.0)
        config = make_config(**{"scan.scan_time_total": 16.0, "plant.sigma_n": 0.0})
        return ScanRunner(config, maps, "neg", controller_kind=kind)

    def test_stc_derived(self):
        """Test the slope tracking operating point is reported."""
        runner = self.runner(ControllerKind.STC)
        derived = runner.derived
        assert derived["controller"] == "stc"
        assert derived["v_b_at_ref"] == pytest.approx(-1.28505, abs=1e-5)
        assert derived["calibration_offset"] == pytest.approx(derived["v_b_at_ref"] + 1.3)
        assert 0.01 < derived["systematic_error"] < 0.02
        assert derived["k_stc"] == 0.04

    def test_esc_derived(self):
        """Test the ESC starts at the true minimum."""
        derived = self.runner(ControllerKind.ESC).derived
        assert derived["controller"] == "esc"
        assert derived["v_b_start"] == pytest.approx(true_dip_minimum(SpectrumParams(), "neg"))
        assert -0.0011 < derived["calibration_offset"] < -0.0006
        assert derived["k_effective"] == pytest.approx(-5e-4)
        assert derived["omega_d"] == pytest.approx(40.0)

    def test_stc_static_run(self):
        """Test a noise-free STC run on a flat sample recovers the dip exactly."""
        run = self.runner(ControllerKind.STC).run()
        assert run.complete
        assert len(run.record) == 3200
        assert run.derived["samples"] == 3200
        np.testing.assert_allclose(run.map, -1.3, atol=1e-6)
        assert run.faults == {
            "controller_faults": 0,
            "outside_window_samples": 0,
            "dip_lost": False,
            "dip_lost_at": None,
        }

    def test_esc_static_run(self):
        """Test the ESC stays at the minimum of a flat sample."""
        run = self.runner(ControllerKind.ESC).run()
        assert run.complete
        np.testing.assert_allclose(run.map, -1.3, atol=5e-4)
        assert np.any(run.record.dither != 0.0)

    def test_feedforward_reported(self):
        """Test the feedforward switch-on is recorded."""
        run = self.runner(ControllerKind.STC).run()
        assert run.derived["ff_enabled"]
        assert run.derived["ff_enabled_line"] == 1
        assert run.derived["ff_enabled_at"] == pytest.approx(8.0)
        assert run.derived["ff_record"] == "corrected"
        assert run.derived["ff_lag"] == pytest.approx(0.1)
        assert run.derived["ff_window_samples"] == 200
        assert run.derived["ff_sensitivity"] > 0

    def test_esc_correction(self):
        """Test the ESC buffer is corrected by the curvature at the minimum after the low-pass delay."""
        derived = self.runner(ControllerKind.ESC).derived
        assert derived["ff_lag"] == pytest.approx(1.0 / derived["omega_l"])
        assert derived["ff_sensitivity"] == pytest.approx(4545.0, rel=0.01)


class TestRunScan:
    """Tests for run_scan artifacts."""

    def test_no_files_without_out_dir(self):
        """Test an in-memory run writes nothing."""
        result = run_scan(tiny_config())
        assert result.ok
        assert result.files == []
        assert result.manifest is None
        assert result.image is not None
        assert result.score is not None

    def test_single_dip_files(self):
        """Test the artifacts of a single dip scan."""
        with tempfile.TemporaryDirectory() as tmpdir:
            result = run_scan(tiny_config(), tmpdir)
            names = {p.name for p in Path(tmpdir).iterdir()}
            manifest = RunManifest.load(Path(tmpdir) / "manifest.txt")
            header = (Path(tmpdir) / "record.csv").read_text(encoding="utf-8").splitlines()[0]
            metrics = read_key_values(Path(tmpdir) / "metrics.txt")
        assert names == {
            "record.csv", "map_neg.txt", "map_neg_raw.txt", "phi_star.txt", "phi_star.pgm",
            "metrics.txt", "error_map.txt", "manifest.txt",
        }
        assert header == ",".join(RECORD_COLUMNS)
        assert manifest.command == "scan"
        assert set(manifest.files) == set(result.files)
        assert manifest.derived["neg"]["controller"] == "stc"
        assert manifest.faults["neg"]["dip_lost"] is False
        assert float(metrics["psnr_db"]) == pytest.approx(result.score.psnr_db)

    def test_ground_truth_stands_in(self):
        """Test the dip that was not scanned comes from the truth."""
        result = run_scan(tiny_config())
        assert result.image.provenance == {"neg": "stc scan", "pos": "ground truth"}

    def test_two_dips(self):
        """Test both dips are scanned and combined."""
        config = tiny_config(**{"scan.controller": "esc"})
        with tempfile.TemporaryDirectory() as tmpdir:
            result = run_two_dip(config, tmpdir)
            names = {p.name for p in Path(tmpdir).iterdir()}
        assert set(result.runs) == {"neg", "pos"}
        assert result.image.provenance == {"neg": "esc scan", "pos": "esc scan"}
        assert {"record_neg.csv", "record_pos.csv", "map_neg.txt", "map_pos.txt", "phi_star.txt"} <= names
        assert "record.csv" not in names

    def test_deterministic(self):
        """Test the same config and seed give byte-identical artifacts."""
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            run_scan(tiny_config(), a)
            run_scan(tiny_config(), b)
            for name in ("record.csv", "phi_star.txt"):
                assert (Path(a) / name).read_bytes() == (Path(b) / name).read_bytes()

    def test_seed_changes_noise(self):
        """Test another seed draws other noise."""
        a = run_scan(tiny_config()).runs["neg"].record
        result = run_scan(tiny_config(), variant=1)
        b = result.runs["neg"].record
        c = run_scan(tiny_config(**{"variant": 1})).runs["neg"].record
        assert not np.array_equal(a.delta_f, b.delta_f)
        assert result.config.variant == 1
        np.testing.assert_array_equal(b.delta_f, c.delta_f)


class TestClosedLoopAccuracy:
    """Reconstruction quality of both controllers with feedforward."""

    @pytest.mark.parametrize("seed", [1, 2, 3, 7, 11, 42])
    @pytest.mark.parametrize("controller", ["esc", "stc"])
    def test_within_tolerance(self, controller, seed):
        """Test 95% of Phi* pixels from two scanned dips lie within 2.5% of the total variation."""
        config = make_config(seed=seed, **{
            **bowl_sample(32, 32, 96.0, 96.0),
            "scan.scan_time_total": 512.0,
            "scan.warmup_lines": 1,
            "scan.warmup_slowdown": 4.0,
            "scan.controller": controller,
            "plant.sigma_n": 0.005,
        })
        result = run_two_dip(config)
        assert result.ok
        assert result.image.provenance == {"neg": f"{controller} scan", "pos": f"{controller} scan"}
        assert within_fraction(result, 0.025 * 0.1905) >= 0.95

    def test_stc_beats_esc(self):
        """Test STC images have the lower MSE under the same conditions."""
        overrides = {
            **bowl_sample(16, 16, 48.0, 48.0),
            "scan.scan_time_total": 256.0,
            "scan.warmup_lines": 1,
            "scan.warmup_slowdown": 4.0,
        }
        esc = run_two_dip(make_config(**{**overrides, "scan.controller": "esc"}))
        stc = run_two_dip(make_config(**{**overrides, "scan.controller": "stc"}))
        assert esc.ok and stc.ok
        assert esc.image.provenance["pos"] == "esc scan"
        assert stc.image.provenance["pos"] == "stc scan"
        assert stc.score.mse < esc.score.mse

    def test_uncompensated_stc_bias_bounded(self):
        """Test the raw STC map sits above the true minima by at most the largest systematic offset."""
        config = make_config(**{
            **bowl_sample(8, 8, 24.0, 24.0, total_variation_mv=20.0),
            "scan.scan_time_total": 256.0,
            "stc.compensate": False,
            "plant.sigma_n": 0.0,
        })
        result = run_scan(config)
        assert result.ok
        run = result.runs["neg"]
        maps = result.sample.maps
        minima = np.empty(maps.v_neg.shape)
        offsets = np.empty(maps.v_neg.shape)
        for index in np.ndindex(maps.v_neg.shape):
            spectrum = config.spectrum.with_dip_centers(maps.v_neg[index], maps.v_pos[index])
            minima[index] = true_dip_minimum(spectrum, DipSelector.NEGATIVE)
            offsets[index] = systematic_error(spectrum, DipSelector.NEGATIVE, run.derived["delta_f_ref"])
        bias = run.raw_map.values - minima
        assert np.max(bias) <= np.max(offsets) + 0.003
        assert np.min(bias) >= np.min(offsets) - 0.003

    def test_slower_scans_score_better(self):
        """Test MSE falls and PSNR rises with the scan time."""
        scales = [1.0, 1.5, 2.0, 3.0]
        config = make_config(**{
            **bowl_sample(16, 16, 48.0, 48.0, total_variation_mv=100.0),
            "scan.scan_time_total": 512.0,
            "scan.controller": "esc",
            "sweep.scan_time_scale": scales,
        })
        sweep = run_sweep(config)
        assert sweep.column("status") == ["ok"] * 4
        mse_rho, _ = spearmanr(scales, sweep.column("mse_v2"))
        psnr_rho, _ = spearmanr(scales, sweep.column("psnr_db"))
        assert mse_rho <= -0.8
        assert psnr_rho >= 0.8


class TestQuickConfig:
    """The shipped 64x64 scenario."""

    @pytest.mark.parametrize("controller", ["esc", "stc"])
    def test_both_dips_within_tolerance(self, controller):
        """Test both dips stay in their windows and 95% of Phi* pixels are within tolerance."""
        path = Path(__file__).resolve().parent.parent / "configs" / "quick.yaml"
        config = RunConfig.from_file(path).with_overrides({"scan.controller": controller})
        result = run_two_dip(config)
        assert result.ok
        for run in result.runs.values():
            assert run.faults["outside_window_samples"] == 0
        tolerance = 0.025 * config.sample.total_variation_mv / 1000.0
        assert within_fraction(result, tolerance) >= 0.95


class TestFeedforward:
    """Feedforward on steep and gentle ramps."""

    @staticmethod
    def steep(controller, ff, **extra):
        return make_config(**{
            **ramp_sample(3.0),
            "scan.scan_time_total": 8.0,
            "scan.warmup_lines": 1,
            "scan.warmup_slowdown": 20.0,
            "scan.dip_loss_time": 0.25,
            "scan.controller": controller,
            "plant.sigma_n": 0.005,
            "ff.enabled": ff,
            "ff.window_time": 0.25,
            **extra,
        })

    @pytest.mark.parametrize("controller", ["esc", "stc"])
    def test_lost_without_feedforward(self, controller):
        """Test the dip runs away at full speed without feedforward."""
        result = run_scan(self.steep(controller, ff=False))
        run = result.runs["neg"]
        assert run.dip_lost
        assert run.faults["dip_lost_at"] > 40.0
        assert result.image is None
        assert not result.ok

    @pytest.mark.parametrize("controller", ["esc", "stc"])
    def test_kept_with_feedforward(self, controller):
        """Test feedforward keeps the bias at the dip."""
        result = run_scan(self.steep(controller, ff=True))
        faults = result.runs["neg"].faults
        assert result.ok
        assert faults["controller_faults"] == 0
        assert faults["outside_window_samples"] == 0
        assert result.image is not None

    def test_continue_after_loss(self):
        """Test the scan can run to the end after losing the dip."""
        result = run_scan(self.steep("stc", ff=False, **{"scan.stop_on_dip_loss": False}))
        run = result.runs["neg"]
        assert run.dip_lost
        assert len(run.record) == 9200

    def test_lower_error_on_gentle_ramp(self):
        """Test feedforward lowers the per-line feedback error."""
        def line_rms(ff):
            config = make_config(**{
                **ramp_sample(1.0),
                "scan.scan_time_total": 64.0,
                "scan.controller": "stc",
                "plant.sigma_n": 0.0,
                "ff.enabled": ff,
            })
            result = run_scan(config)
            assert result.ok
            return float(np.mean(per_line_rms(result.runs["neg"].record)[2:]))

        assert line_rms(True) < line_rms(False)

    @pytest.mark.parametrize("controller", ["esc", "stc"])
    def test_disabled_is_pure_feedback(self, controller):
        """Test a run without feedforward applies the feedback output alone, bit for bit."""
        off = run_scan(tiny_config(**{"scan.controller": controller, "ff.enabled": False}))
        never = run_scan(tiny_config(**{"scan.controller": controller, "ff.enabled_after_lines": 1000}))
        record = off.runs["neg"].record
        assert np.all(record.v_b_ff == 0.0)
        assert np.array_equal(record.v_b, record.v_b_c)
        assert not never.runs["neg"].derived["ff_enabled"]
        assert np.array_equal(never.runs["neg"].record.v_b, record.v_b)
        assert np.array_equal(never.runs["neg"].record.delta_f, record.delta_f)

    @pytest.mark.parametrize("controller", ["esc", "stc"])
    def test_tracking_error_does_not_grow(self, controller):
        """Test the replayed bias keeps late lines as close to the dip as early ones."""
        config = make_config(**{
            **ramp_sample(1.0, lines=24),
            "scan.scan_time_total": 192.0,
            "scan.controller": controller,
            "plant.sigma_n": 0.005,
        })
        result = run_scan(config)
        assert result.ok
        run = result.runs["neg"]
        record = run.record
        target = result.sample.maps.v_neg[record.row, record.col] + run.derived["calibration_offset"]
        error = np.abs(record.v_b - target)
        per_line = np.array([np.mean(error[record.line == line]) for line in range(24)])
        assert np.mean(per_line[-6:]) <= 2.0 * np.mean(per_line[2:8]) + 1e-3

    def test_applied_bias_mode(self):
        """Test the uncorrected buffer is still available."""
        result = run_scan(tiny_config(**{"ff.correct_tracking_error": False}))
        derived = result.runs["neg"].derived
        assert result.ok
        assert derived["ff_record"] == "applied"
        assert derived["ff_lag"] == 0.0


class TestRegain:
    """Tests for regain_experiment."""

    @staticmethod
    def config(**overrides):
        return make_config(**{"plant.sigma_n": 0.0, **overrides})

    def test_shift_and_minimum(self):
        """Test the offset is half a width from the true minimum."""
        result = regain_experiment(self.config())
        assert result.shift == pytest.approx(0.011)
        assert result.v_min == pytest.approx(true_dip_minimum(SpectrumParams(), "neg"))
        assert result.tolerance == pytest.approx(1e-3)
        assert result.settled
        assert 3.0 < result.settling_time < 8.0

    def test_deeper_dips_regain_faster(self):
        """Test settling time strictly decreases with the dip depth."""
        times = [regain_experiment(self.config(), depth_scale=m).settling_time for m in (1, 2, 4)]
        assert None not in times
        assert times[0] > times[1] > times[2]

    def test_wider_dips_regain_slower(self):
        """Test settling time strictly increases with the dip width."""
        config = self.config(**{"sweep.regain_duration": 300.0})
        times = [regain_experiment(config, width_scale=m).settling_time for m in (1, 2, 4)]
        assert None not in times
        assert times[0] < times[1] < times[2]

    def test_not_settled(self):
        """Test a run that ends before settling reports None."""
        result = regain_experiment(self.config(**{"sweep.regain_duration": 11.0}))
        assert result.settling_time is None
        assert not result.settled

    def test_sweep(self):
        """Test the regain experiment as a sweep."""
        config = self.config(**{"sweep.experiment": "regain", "sweep.depth_scale": [1.0, 4.0]})
        sweep = run_sweep(config)
        assert sweep.columns == ["variant", "depth_scale", "settling_time_s", "status"]
        first, second = sweep.column("settling_time_s")
        assert first > second


class TestSweep:
    """Tests for run_sweep."""

    def test_needs_an_axis(self):
        """Test a sweep without axes is rejected."""
        with pytest.raises(ConfigError):
            run_sweep(RunConfig(seed=1))

    def test_empty_axis_rejected(self):
        """Test an empty axis fails validation."""
        with pytest.raises(ValueError):
            make_config(**{"sweep.ff": []})

    def test_feedforward_axis(self):
        """Test rows, the metrics table and the summary."""
        config = tiny_config(**{"sweep.ff": [True, False]})
        with tempfile.TemporaryDirectory() as tmpdir:
            sweep = run_sweep(config, tmpdir)
            table = (Path(tmpdir) / "sweep.csv").read_text(encoding="utf-8").splitlines()
            summary = read_key_values(Path(tmpdir) / "summary.txt")
            manifest = RunManifest.load(Path(tmpdir) / "variant_001" / "manifest.txt")
        assert sweep.columns == [
            "variant", "ff", "mse_v2", "rmse_mv", "psnr_db", "controller_faults", "dip_lost", "status",
        ]
        assert sweep.column("ff") == [True, False]
        assert sweep.column("status") == ["ok", "ok"]
        assert table[0] == ",".join(sweep.columns)
        assert len(table) == 3
        assert summary["variants"] == "2"
        assert summary["failed"] == "0"
        assert manifest.command == "sweep"
        assert manifest.config["ff.enabled"] is False

    def test_apply_variant(self):
        """Test a variant scales the scan time and the dips."""
        config = make_config(**{"scan.scan_time_total": 100.0})
        variant = apply_variant(config, {"scan_time_scale": 2.0, "depth_scale": 2.0, "width_scale": 0.5, "ff": False})
        assert variant.scan.scan_time_total == 200.0
        assert variant.spectrum.d_neg == pytest.approx(-2.2)
        assert variant.spectrum.w_pos == pytest.approx(0.0435)
        assert variant.spectrum.p1 == config.spectrum.p1
        assert not variant.ff.enabled
        assert config.ff.enabled
        assert variant.variant is None
        assert apply_variant(config, {}, index=4).variant == 4

    def test_variant_reproduced_from_manifest(self):
        """Test a variant manifest re-runs to a byte-identical record."""
        config = tiny_config(**{"sweep.ff": [True, False]})
        with tempfile.TemporaryDirectory() as tmpdir, tempfile.TemporaryDirectory() as rerun:
            run_sweep(config, tmpdir)
            variant_dir = Path(tmpdir) / "variant_001"
            manifest = RunManifest.load(variant_dir / "manifest.txt")
            assert manifest.config["variant"] == 1
            run_scan(manifest.run_config(), rerun)
            assert (Path(rerun) / "record.csv").read_bytes() == (variant_dir / "record.csv").read_bytes()

    def test_unexpected_failure_recorded(self, monkeypatch):
        """Test any exception in a variant lands in its row and the sweep goes on."""
        real_run_scan = scan_module.run_scan

        def flaky(config, *args, **kwargs):
            if config.variant == 0:
                raise RuntimeError("solver blew up")
            return real_run_scan(config, *args, **kwargs)

        monkeypatch.setattr(scan_module, "run_scan", flaky)
        sweep = run_sweep(tiny_config(**{"sweep.ff": [True, False]}))
        assert sweep.column("status") == ["error: RuntimeError: solver blew up", "ok"]
        assert sweep.rows[0].get("mse_v2") is None


class TestThroughput:
    """Tests for the spectroscopy comparison."""

    def test_default_speedup(self):
        """Test continuous scanning beats 3 s per pixel by more than 10x."""
        report = throughput(RunConfig(seed=1))
        assert report.pixels == 40000
        assert report.grid_time_s == pytest.approx(240000.0)
        assert report.speedup == pytest.approx(240000.0 / 14400.0)
        assert report.speedup > 10

    def test_to_dict(self):
        """Test the report is in hours."""
        data = throughput(RunConfig(seed=1), dips=1).to_dict()
        assert data["scan_time_h"] == pytest.approx(2.0)
        assert data["grid_time_h"] == pytest.approx(120000.0 / 3600.0)
