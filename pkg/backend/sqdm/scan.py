"""
Closed-loop scan orchestration.

ScanRunner drives one dip run sample by sample:
locate the tip, add the feedforward to the feedback output, apply the
dither, step the plant, update the controller and record. run_scan wraps
it into the on-disk workflow (both dips, Phi* image, score, manifest);
run_sweep repeats runs over a grid of variants; regain_experiment measures
how fast the ESC recovers the minimum after a bias offset.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .artifacts import read_matrix, write_key_values, write_matrix, write_pgm
from .errors import ConfigError, ImagingError, SqdmError
from .esc import EscParams, ExtremumSeekingController
from .feedforward import PreviousLineFeedforward, TrackingCorrection
from .imaging import (
    FAULT_CONTROLLER,
    FAULT_OUTSIDE_WINDOW,
    AssembledMap,
    PotentialImage,
    ScanRecord,
    ScoreResult,
    assemble_map,
    compute_phi_star,
    score,
)
from .manifest import MANIFEST_FILE, RunManifest, RunTimer
from .models import ControllerKind, DipSelector, RunConfig
from .plant import DipMaps, SqdmPlant, Trajectory, pll_alpha
from .samplegen import TRUTH_FILE, gen_sample
from .spectrum import eval_curvature, eval_derivative, true_dip_minimum
from .stc import SlopeTrackingController, StcParams, compensate_map, systematic_error

logger = logging.getLogger(__name__)

RECORD_FILE = "record.csv"
PHI_FILE = "phi_star.txt"
PGM_FILE = "phi_star.pgm"
METRICS_FILE = "metrics.txt"
ERROR_MAP_FILE = "error_map.txt"
SWEEP_FILE = "sweep.csv"
SUMMARY_FILE = "summary.txt"
SAMPLE_DIR = "sample"

# Point-by-point spectroscopy time per pixel and dip (s)
GRID_SECONDS_PER_PIXEL = 3.0

# Spawn keys below the master seed
_SAMPLE_KEY = 0
_SCAN_KEY = 1
_SWEEP_KEY = 2


def map_file(dip: DipSelector, raw: bool = False) -> str:
    return f"map_{DipSelector(dip).value}{'_raw' if raw else ''}.txt"


def sample_seed(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(_SAMPLE_KEY,))


def noise_seed(seed: int, dip: DipSelector, variant: Optional[int] = None) -> np.random.SeedSequence:
    """Per-dip noise stream; sweep variants get their own subtree."""
    dip_index = 0 if DipSelector(dip) is DipSelector.NEGATIVE else 1
    if variant is None:
        return np.random.SeedSequence(seed, spawn_key=(_SCAN_KEY, dip_index))
    return np.random.SeedSequence(seed, spawn_key=(_SWEEP_KEY, variant, dip_index))


@dataclass
class Sample:
    """Ground-truth dip maps and the potential they encode."""

    maps: DipMaps
    phi_star: np.ndarray


def load_sample(config: RunConfig) -> Sample:
    """Maps from sample.maps_dir, or a synthetic sample from the master seed."""
    spec = config.sample
    if spec.maps_dir:
        maps = DipMaps.load(spec.maps_dir)
        truth_path = Path(spec.maps_dir) / TRUTH_FILE
        if truth_path.exists():
            phi = read_matrix(truth_path)
        else:
            phi = compute_phi_star(maps.v_neg, maps.v_pos, spec.v_neg0, spec.delta_v0).values
        return Sample(maps=maps, phi_star=phi)
    phi, maps = gen_sample(spec, sample_seed(config.seed))
    return Sample(maps=maps, phi_star=phi)


def write_sample(sample: Sample, directory: Union[str, Path]) -> List[str]:
    """Dip maps, header and truth potential; returns the file names."""
    directory = Path(directory)
    sample.maps.save(directory)
    write_matrix(directory / TRUTH_FILE, sample.phi_star)
    write_pgm(directory / "phi_star_truth.pgm", sample.phi_star)
    return ["maps.txt", "v_neg.txt", "v_pos.txt", TRUTH_FILE, "phi_star_truth.pgm"]


@dataclass
class DipRun:
    """Outcome of scanning one dip."""

    dip: DipSelector
    controller: ControllerKind
    record: ScanRecord
    raw_map: AssembledMap
    map: np.ndarray
    derived: Dict[str, Any]
    faults: Dict[str, Any]

    @property
    def dip_lost(self) -> bool:
        return bool(self.faults.get("dip_lost"))

    @property
    def complete(self) -> bool:
        return self.raw_map.complete and not self.dip_lost


class ScanRunner:
    """
    One closed-loop raster scan of one dip.

    The controller starts at its operating point on the spectrum seen at
    the first pixel: the true minimum for ESC, the reference point for STC.
    The same calibration spectrum converts the regulated biases into dip
    positions afterwards.
    """

    def __init__(
        self,
        config: RunConfig,
        maps: DipMaps,
        dip: DipSelector,
        seed: Optional[Union[int, np.random.SeedSequence]] = None,
        controller_kind: Optional[ControllerKind] = None,
    ):
        self.config = config
        self.maps = maps
        self.dip = DipSelector(dip)
        self.kind = ControllerKind(controller_kind or config.scan.controller)
        self.seed = seed if seed is not None else noise_seed(config.seed, self.dip, config.variant)
        self.trajectory = Trajectory.for_maps(config.scan, maps)
        self.calibration = config.spectrum.with_dip_centers(maps.v_neg[0, 0], maps.v_pos[0, 0])
        self.controller, self.derived = self._build_controller()

    def _build_controller(self) -> Tuple[Any, Dict[str, Any]]:
        cfg = self.config
        t_s = cfg.scan.t_s
        _, center, width = self.calibration.dip(self.dip)
        derived: Dict[str, Any] = {
            "controller": self.kind.value,
            "alpha": pll_alpha(cfg.plant.omega_pll, t_s),
            "dip_center_at_start": center,
        }
        if self.kind is ControllerKind.ESC:
            params = EscParams.from_config(cfg.esc.model_copy(update={"dip": self.dip}), cfg.plant.omega_pll)
            v_min = true_dip_minimum(self.calibration, self.dip)
            controller = ExtremumSeekingController(params, t_s, v_b_c0=v_min)
            derived.update({
                "omega_d": params.omega_d,
                "omega_l": params.omega_l,
                "omega_h": params.omega_h,
                "phi_rad": params.phi,
                "k": params.k,
                "k_effective": params.effective_k,
                "k_esc": params.k_esc,
                "v_b_start": v_min,
                "calibration_offset": v_min - center,
            })
            correction = TrackingCorrection(
                sensitivity=eval_curvature(self.calibration, v_min, step=1e-3 * width),
                limit=0.5 * width,
                lag=1.0 / params.omega_l,
            )
        else:
            params = StcParams.from_config(cfg.stc.model_copy(update={"dip": self.dip}), self.calibration)
            controller = SlopeTrackingController(params, t_s)
            derived.update({
                "delta_f_ref": params.delta_f_ref,
                "v_b_at_ref": params.v_ref,
                "rho": params.rho,
                "k_stc": params.k_stc,
                "systematic_error": systematic_error(self.calibration, self.dip, params.delta_f_ref),
                "v_b_start": params.v_ref,
                "calibration_offset": params.v_ref - center,
                "compensated": cfg.stc.compensate,
            })
            correction = TrackingCorrection(
                sensitivity=float(eval_derivative(self.calibration, params.v_ref)),
                limit=0.5 * width,
                lag=1.0 / cfg.plant.omega_pll,
            )
        self.correction = correction if cfg.ff.correct_tracking_error else None
        derived.update({
            "ff_record": "corrected" if self.correction else "applied",
            "ff_sensitivity": correction.sensitivity,
            "ff_lag": correction.lag if self.correction else 0.0,
        })
        return controller, derived

    def dip_positions(self, raw: np.ndarray) -> np.ndarray:
        """Regulated biases to dip positions."""
        if self.kind is ControllerKind.STC and self.config.stc.compensate:
            return compensate_map(
                raw, self.calibration, self.dip, self.controller.params.delta_f_ref
            )
        return raw - self.derived["calibration_offset"]

    def run(self) -> DipRun:
        cfg = self.config
        scan = cfg.scan
        t_s = scan.t_s
        trajectory = self.trajectory
        steps = int(math.floor(trajectory.total_time / t_s + 1e-9))
        times = np.arange(steps) * t_s
        samples = trajectory.sample(times)
        rows, cols = self.maps.pixel_index(samples.x, samples.y)
        v_neg = self.maps.v_neg[rows, cols].tolist()
        v_pos = self.maps.v_pos[rows, cols].tolist()
        tracked = v_neg if self.dip is DipSelector.NEGATIVE else v_pos

        window = scan.dip_loss_widths * self.calibration.dip(self.dip).width
        loss_steps = int(round(scan.dip_loss_time / t_s))

        plant = SqdmPlant(cfg.spectrum, cfg.plant, t_s, seed=self.seed)
        ff = PreviousLineFeedforward(cfg.ff, scan.back_and_forth, t_s=t_s)
        controller = self.controller
        correction = self.correction
        lag_steps = correction.lag_steps(t_s) if correction else 0
        pass_start = 0

        ts = times.tolist()
        xs = samples.x.tolist()
        lines = samples.line.tolist()
        passes = samples.pass_index.tolist()
        forwards = samples.forward.tolist()

        v_b_out, v_c_out, v_ff_out, dither_out = [], [], [], []
        meas_out, error_out, fault_out = [], [], []
        current_pass, current_line = 0, 0
        outside_run, outside_total = 0, 0
        lost_at: Optional[float] = None

        logger.info(
            "Scanning %s dip with %s: %dx%d px, %d samples (%.1f s)",
            self.dip.value, self.kind.value, self.maps.width, self.maps.height, steps, trajectory.total_time,
        )
        for k in range(steps):
            t = ts[k]
            if passes[k] != current_pass:
                ff.end_pass(forwards[k - 1])
                current_pass = passes[k]
                pass_start = k
                if lines[k] != current_line:
                    current_line = lines[k]
                    ff.maybe_enable(current_line, controller.output, t)

            forward, x = forwards[k], xs[k]
            v_ff = ff.query(forward, x)
            v_c = controller.output
            v_b = v_c + v_ff
            dither = controller.dither(t)
            measurement = plant.output(v_b + dither, v_neg[k], v_pos[k])
            controller.update(measurement, t)
            if correction is None:
                ff.record(forward, x, v_b)
            else:
                # the error read now belongs to the bias applied lag_steps ago, within this pass
                j = max(k - lag_steps, pass_start)
                v_b_then = v_b if j == k else v_b_out[j]
                ff.record(forward, xs[j], correction.operating_point(v_b_then, controller.error))

            fault = FAULT_CONTROLLER if controller.state.fault else 0
            if abs(v_b - tracked[k]) > window:
                fault |= FAULT_OUTSIDE_WINDOW
                outside_run += 1
                outside_total += 1
            else:
                outside_run = 0

            v_b_out.append(v_b)
            v_c_out.append(v_c)
            v_ff_out.append(v_ff)
            dither_out.append(dither)
            meas_out.append(measurement)
            error_out.append(controller.error)
            fault_out.append(fault)

            if outside_run > loss_steps and lost_at is None:
                lost_at = t
                logger.warning(
                    "Lost the %s dip at t=%.2f s (line %d): bias %.4f V, dip at %.4f V",
                    self.dip.value, t, lines[k], v_b, tracked[k],
                )
                if scan.stop_on_dip_loss:
                    break

        n = len(v_b_out)
        record = ScanRecord(
            t=times[:n],
            x=samples.x[:n],
            y=samples.y[:n],
            line=samples.line[:n].astype(np.int64),
            row=rows[:n].astype(np.int64),
            col=cols[:n].astype(np.int64),
            forward=samples.forward[:n].astype(np.int64),
            v_b=np.asarray(v_b_out),
            v_b_c=np.asarray(v_c_out),
            v_b_ff=np.asarray(v_ff_out),
            dither=np.asarray(dither_out),
            delta_f=np.asarray(meas_out),
            error=np.asarray(error_out),
            fault=np.asarray(fault_out, dtype=np.int64),
        )
        raw = assemble_map(record, self.maps.width, self.maps.height)
        derived = dict(self.derived)
        derived.update({
            "samples": n,
            "total_time": trajectory.total_time,
            "pass_time": trajectory.nominal_pass_time,
            "ff_enabled": ff.enabled,
            "ff_mode": "delta",
            "ff_window_samples": ff.window_samples,
            "ff_baseline": ff.baseline,
            "ff_enabled_at": ff.enabled_at,
            "ff_enabled_line": ff.enabled_line,
        })
        faults = {
            "controller_faults": int(controller.faults),
            "outside_window_samples": int(outside_total),
            "dip_lost": lost_at is not None,
            "dip_lost_at": lost_at,
        }
        logger.info(
            "Finished %s dip: %d samples, %d pixels missing, dip lost: %s",
            self.dip.value, n, len(raw.missing), faults["dip_lost"],
        )
        return DipRun(
            dip=self.dip,
            controller=self.kind,
            record=record,
            raw_map=raw,
            map=self.dip_positions(raw.values),
            derived=derived,
            faults=faults,
        )


@dataclass
class ThroughputReport:
    """Continuous scanning versus point-by-point spectroscopy."""

    pixels: int
    dips: int
    grid_time_s: float
    scan_time_s: float

    @property
    def speedup(self) -> float:
        return self.grid_time_s / self.scan_time_s

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pixels": self.pixels,
            "dips": self.dips,
            "grid_time_h": self.grid_time_s / 3600.0,
            "scan_time_h": self.scan_time_s / 3600.0,
            "speedup": self.speedup,
        }


def throughput(config: RunConfig, dips: int = 2) -> ThroughputReport:
    """Time for both dips by continuous scan versus 3 s per pixel per dip."""
    spec = config.sample
    trajectory = Trajectory(
        config.scan,
        spec.extent_x,
        spec.extent_y,
        config.scan.lines or spec.height,
        config.scan.pixels_per_line or spec.width,
    )
    pixels = spec.width * spec.height
    return ThroughputReport(
        pixels=pixels,
        dips=dips,
        grid_time_s=GRID_SECONDS_PER_PIXEL * pixels * dips,
        scan_time_s=trajectory.total_time * dips,
    )


@dataclass
class ScanResult:
    """Everything produced by run_scan."""

    config: RunConfig
    runs: Dict[str, DipRun]
    sample: Sample
    image: Optional[PotentialImage] = None
    score: Optional[ScoreResult] = None
    manifest: Optional[RunManifest] = None
    files: List[str] = field(default_factory=list)
    out_dir: Optional[Path] = None

    @property
    def dip_lost(self) -> bool:
        return any(run.dip_lost for run in self.runs.values())

    @property
    def ok(self) -> bool:
        return not self.dip_lost


def _combine(runs: Dict[str, DipRun], sample: Sample, config: RunConfig) -> PotentialImage:
    """Phi* from measured maps; a dip not scanned is taken from the ground truth."""
    spec = config.sample
    provenance = {}
    maps = {}
    for dip in DipSelector:
        run = runs.get(dip.value)
        if run is not None:
            maps[dip] = run.map
            provenance[dip.value] = f"{run.controller.value} scan"
        else:
            maps[dip] = sample.maps.v_neg if dip is DipSelector.NEGATIVE else sample.maps.v_pos
            provenance[dip.value] = "ground truth"
    return compute_phi_star(
        maps[DipSelector.NEGATIVE],
        maps[DipSelector.POSITIVE],
        spec.v_neg0,
        spec.delta_v0,
        extent_x=sample.maps.extent_x,
        extent_y=sample.maps.extent_y,
        **provenance,
    )


def run_scan(
    config: RunConfig,
    out_dir: Optional[Union[str, Path]] = None,
    dips: Optional[Sequence[DipSelector]] = None,
    variant: Optional[int] = None,
    sample: Optional[Sample] = None,
    command: str = "scan",
) -> ScanResult:
    """
    Scan the configured dip(s) and, when out_dir is given, write artifacts.

    A single dip writes record.csv; two dips write record_neg.csv and
    record_pos.csv. Phi* is formed as soon as every scanned dip covered the
    whole map, with the ground truth standing in for a dip that was not
    scanned, and is scored against the true potential.
    """
    dips = [DipSelector(d) for d in (dips or [config.dip])]
    out = Path(out_dir) if out_dir is not None else None
    files: List[str] = []
    if variant is not None and variant != config.variant:
        config = config.model_copy(update={"variant": variant})

    with RunTimer() as timer:
        sample = sample or load_sample(config)
        runs: Dict[str, DipRun] = {}
        for dip in dips:
            runner = ScanRunner(config, sample.maps, dip, seed=noise_seed(config.seed, dip, config.variant))
            run = runner.run()
            runs[dip.value] = run
            if run.dip_lost and config.scan.stop_on_dip_loss:
                break

        image, result = None, None
        if all(run.complete for run in runs.values()):
            try:
                image = _combine(runs, sample, config)
                result = score(image, sample.phi_star)
            except ImagingError as e:
                logger.warning("No image: %s", e)

        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            for key, run in runs.items():
                name = RECORD_FILE if len(dips) == 1 else f"record_{key}.csv"
                run.record.to_csv(out / name)
                write_matrix(out / map_file(run.dip), run.map)
                write_matrix(out / map_file(run.dip, raw=True), run.raw_map.values)
                files += [name, map_file(run.dip), map_file(run.dip, raw=True)]
            if image is not None:
                write_matrix(out / PHI_FILE, image.values)
                write_pgm(out / PGM_FILE, image.values)
                files += [PHI_FILE, PGM_FILE]
            if result is not None:
                result.save(out / METRICS_FILE)
                write_matrix(out / ERROR_MAP_FILE, result.error_map)
                files += [METRICS_FILE, ERROR_MAP_FILE]

    scan_result = ScanResult(
        config=config, runs=runs, sample=sample, image=image, score=result, files=files, out_dir=out,
    )
    if out is not None:
        manifest = RunManifest.generate(
            command=command,
            config=config,
            duration_ms=timer.duration_ms,
            out_dir=out,
            files=files,
            derived={key: run.derived for key, run in runs.items()},
            faults={key: run.faults for key, run in runs.items()},
            metrics=result.to_dict() if result is not None else None,
            throughput=throughput(config).to_dict(),
        )
        manifest.save(out / MANIFEST_FILE)
        scan_result.manifest = manifest
    return scan_result


def run_two_dip(config: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> ScanResult:
    """Negative then positive dip with the same controller, combined into Phi*."""
    return run_scan(config, out_dir, dips=[DipSelector.NEGATIVE, DipSelector.POSITIVE])


@dataclass
class RegainResult:
    """ESC recovery after a bias offset."""

    settling_time: Optional[float]
    v_min: float
    shift: float
    tolerance: float
    t: np.ndarray
    v_b_c: np.ndarray

    @property
    def settled(self) -> bool:
        return self.settling_time is not None


def regain_experiment(
    config: RunConfig,
    depth_scale: float = 1.0,
    width_scale: float = 1.0,
    seed: Optional[Union[int, np.random.SeedSequence]] = None,
) -> RegainResult:
    """
    Static plant, ESC parked at the minimum, bias shifted by half a width
    towards the right slope at sweep.regain_shift_time. The settling time
    is measured from the shift until V_b,C stays within the tolerance of
    the minimum for the rest of the run; None if it never does.
    """
    sweep = config.sweep
    t_s = config.scan.t_s
    spectrum = config.spectrum.scaled(depth_scale, width_scale)
    dip = DipSelector(config.esc.dip)
    params = EscParams.from_config(config.esc.model_copy(update={"k": sweep.regain_k}), config.plant.omega_pll)
    v_min = true_dip_minimum(spectrum, dip)
    shift = 0.5 * spectrum.dip(dip).width
    tolerance = sweep.regain_tolerance or params.a_d

    controller = ExtremumSeekingController(params, t_s, v_b_c0=v_min)
    plant = SqdmPlant(spectrum, config.plant, t_s, seed=seed if seed is not None else config.seed)
    steps = int(round(sweep.regain_duration / t_s))
    shift_step = int(round(sweep.regain_shift_time / t_s))
    v_neg, v_pos = spectrum.v_neg, spectrum.v_pos

    trace = np.empty(steps)
    for k in range(steps):
        t = k * t_s
        if k == shift_step:
            controller.shift(shift)
        trace[k] = controller.output
        measurement = plant.output(controller.output + controller.dither(t), v_neg, v_pos)
        controller.update(measurement, t)

    after = np.abs(trace[shift_step:] - v_min) > tolerance
    if not after.any():
        settling: Optional[float] = 0.0
    else:
        last = int(np.nonzero(after)[0][-1])
        settling = None if last == len(after) - 1 else (last + 1) * t_s
    logger.info(
        "Regain (depth x%g, width x%g): settling %s",
        depth_scale, width_scale, "never" if settling is None else f"{settling:.3f} s",
    )
    return RegainResult(
        settling_time=settling,
        v_min=v_min,
        shift=shift,
        tolerance=tolerance,
        t=np.arange(steps) * t_s,
        v_b_c=trace,
    )


def apply_variant(config: RunConfig, values: Dict[str, Any], index: Optional[int] = None) -> RunConfig:
    """Config of one sweep variant; the index selects its noise stream."""
    scan_scale = values.get("scan_time_scale", 1.0)
    depth_scale = values.get("depth_scale", 1.0)
    width_scale = values.get("width_scale", 1.0)
    update: Dict[str, Any] = {
        "scan": config.scan.model_copy(update={"scan_time_total": config.scan.scan_time_total * scan_scale}),
        "spectrum": config.spectrum.scaled(depth_scale, width_scale),
    }
    if index is not None:
        update["variant"] = int(index)
    if "ff" in values:
        update["ff"] = config.ff.model_copy(update={"enabled": bool(values["ff"])})
    return config.model_copy(update=update)


@dataclass
class SweepResult:
    """One row per variant."""

    columns: List[str]
    rows: List[Dict[str, Any]]
    throughput: ThroughputReport

    def column(self, name: str) -> List[Any]:
        return [row.get(name) for row in self.rows]

    def to_csv(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=self.columns, extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: "" if row.get(k) is None else row.get(k) for k in self.columns})


def run_sweep(
    config: RunConfig,
    out_dir: Optional[Union[str, Path]] = None,
    dips: Optional[Sequence[DipSelector]] = None,
) -> SweepResult:
    """
    Run every combination of the configured axes.

    Variants share the ground-truth sample; each draws its own noise
    stream from the master seed and its index. A failing variant is
    recorded in its row and the sweep continues.

    Raises:
        ConfigError: no sweep axis configured.
    """
    axes = config.sweep.axes()
    if not axes:
        raise ConfigError("Sweep needs at least one axis (scan_time_scale, depth_scale, width_scale or ff)")
    names = list(axes)
    experiment = config.sweep.experiment
    out = Path(out_dir) if out_dir is not None else None
    sample = load_sample(config) if experiment == "scan" else None

    metric_columns = (
        ["mse_v2", "rmse_mv", "psnr_db", "controller_faults", "dip_lost"]
        if experiment == "scan" else ["settling_time_s"]
    )
    columns = ["variant"] + names + metric_columns + ["status"]
    rows: List[Dict[str, Any]] = []
    combos = list(itertools.product(*axes.values()))
    logger.info("Sweep (%s): %d variants over %s", experiment, len(combos), ", ".join(names))

    for index, combo in enumerate(combos):
        values = dict(zip(names, combo))
        row: Dict[str, Any] = {"variant": index, **values}
        try:
            variant_config = apply_variant(config, values, index)
            if experiment == "scan":
                result = run_scan(
                    variant_config,
                    out / f"variant_{index:03d}" if out is not None else None,
                    dips=dips,
                    sample=sample,
                    command="sweep",
                )
                if result.score is not None:
                    row.update({
                        "mse_v2": result.score.mse,
                        "rmse_mv": result.score.rmse_mv,
                        "psnr_db": result.score.psnr_db,
                    })
                row["controller_faults"] = sum(r.faults["controller_faults"] for r in result.runs.values())
                row["dip_lost"] = result.dip_lost
            else:
                regain = regain_experiment(
                    variant_config,
                    seed=np.random.SeedSequence(config.seed, spawn_key=(_SWEEP_KEY, index)),
                )
                row["settling_time_s"] = regain.settling_time
            row["status"] = "ok"
        except SqdmError as e:
            logger.warning("Variant %d failed: %s", index, e)
            row["status"] = f"error: {e}"
        except Exception as e:
            logger.exception("Variant %d failed unexpectedly", index)
            row["status"] = f"error: {type(e).__name__}: {e}"
        rows.append(row)

    report = throughput(config)
    sweep = SweepResult(columns=columns, rows=rows, throughput=report)
    if out is not None:
        sweep.to_csv(out / SWEEP_FILE)
        write_key_values(out / SUMMARY_FILE, {
            "experiment": experiment,
            "variants": len(rows),
            "failed": sum(1 for r in rows if r["status"] != "ok"),
            **{f"throughput.{k}": v for k, v in report.to_dict().items()},
        })
    return sweep
