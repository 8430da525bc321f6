"""
SQDM CLI.

Command-line interface for closed-loop SQDM scan simulation.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import click
import yaml
from pydantic import ValidationError

from . import __version__
from .artifacts import read_matrix, write_matrix, write_pgm
from .errors import ConfigError, SqdmError
from .imaging import compute_phi_star, score
from .manifest import MANIFEST_FILE, RunManifest, RunTimer
from .models import ControllerKind, DipSelector, RunConfig, SpectrumParams
from .scan import (
    ERROR_MAP_FILE,
    METRICS_FILE,
    PGM_FILE,
    PHI_FILE,
    SWEEP_FILE,
    Sample,
    run_scan,
    run_sweep,
    sample_seed,
    throughput,
    write_sample,
)
from .samplegen import gen_sample
from .spectrum import fit_spectrum, load_samples
from .validator import ValidationEngine, all_violations

logger = logging.getLogger(__name__)


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def parse_overrides(pairs: Tuple[str, ...]) -> Dict[str, Any]:
    """`key=value` pairs; values are parsed as YAML scalars."""
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"Override '{pair}' is not of the form key=value")
        key, raw = pair.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(raw)
    return overrides


def load_config(
    config_path: Optional[str],
    seed: Optional[int],
    controller: Optional[str] = None,
    dip: Optional[str] = None,
    ff: Optional[str] = None,
    settings: Tuple[str, ...] = (),
) -> RunConfig:
    """
    Config file plus command-line overrides.

    Without a config file a seed is required; every other key has a default.
    """
    if config_path:
        config = RunConfig.from_file(config_path)
    elif seed is None:
        raise ConfigError("A seed is required: pass --seed or a config file with 'seed'")
    else:
        config = RunConfig(seed=seed)

    overrides = parse_overrides(settings)
    if seed is not None:
        overrides["seed"] = seed
    if controller:
        overrides["scan.controller"] = controller
    if dip and dip != "both":
        section = controller or config.scan.controller.value
        overrides[f"{section}.dip"] = dip
    if ff:
        overrides["ff.enabled"] = ff == "on"
    return config.with_overrides(overrides)


def fail(message: str) -> None:
    click.secho(f"Error: {message}", fg="red", err=True)
    sys.exit(1)


def config_options(func):
    """Flags shared by every simulating command."""
    func = click.option("--set", "settings", multiple=True, metavar="KEY=VALUE",
                        help="Override a dotted config key")(func)
    func = click.option("--seed", type=click.IntRange(min=0), default=None, help="Master seed")(func)
    func = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                        default=None, help="YAML run configuration")(func)
    return func


@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def cli(ctx: click.Context, verbose: bool):
    """SQDM: closed-loop bias control for scanning quantum dot microscopy.

    Simulates ESC and STC dip tracking over raster scans, builds effective
    surface potential images and scores them against a ground truth.
    """
    ctx.ensure_object(dict)
    configure_logging(verbose)
    ctx.obj["verbose"] = verbose


@cli.command("gen-sample")
@config_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory")
def gen_sample_cmd(config_path: Optional[str], seed: Optional[int], settings: Tuple[str, ...], out_dir: str):
    """Generate a synthetic sample: dip maps and the true potential.

    \b
    Example:
        sqdm gen-sample --seed 7 --set sample.width=64 --set sample.height=64 --out sample/
    """
    try:
        config = load_config(config_path, seed, settings=settings)
        with RunTimer() as timer:
            phi, maps = gen_sample(config.sample, sample_seed(config.seed))
            files = write_sample(Sample(maps=maps, phi_star=phi), out_dir)
        manifest = RunManifest.generate("gen-sample", config, timer.duration_ms, Path(out_dir), files)
        manifest.save(Path(out_dir) / MANIFEST_FILE)
    except (SqdmError, ValidationError) as e:
        fail(str(e))
    click.echo(f"Sample {maps.width}x{maps.height} written to {out_dir}")
    click.echo(f"  Potential range: {(phi.max() - phi.min()) * 1e3:.1f} mV")


@cli.command()
@config_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory")
@click.option("--controller", type=click.Choice([c.value for c in ControllerKind]), default=None)
@click.option("--dip", type=click.Choice(["neg", "pos", "both"]), default=None)
@click.option("--ff", type=click.Choice(["on", "off"]), default=None, help="Feedforward")
@click.option("--maps", "maps_dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Dip maps directory instead of a generated sample")
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
def scan(config_path, seed, settings, out_dir, controller, dip, ff, maps_dir, output_format):
    """Run a closed-loop raster scan of one or both dips.

    Exits with status 1 when a dip is lost; the artifacts written up to
    that point are kept.
    """
    try:
        if maps_dir:
            settings = settings + (f"sample.maps_dir={maps_dir}",)
        config = load_config(config_path, seed, controller, dip, ff, settings)
        dips = list(DipSelector) if dip == "both" else [config.dip]
        result = run_scan(config, out_dir, dips=dips)
    except (SqdmError, ValidationError) as e:
        fail(str(e))

    if output_format == "json":
        click.echo(json.dumps({
            "ok": result.ok,
            "faults": {k: r.faults for k, r in result.runs.items()},
            "metrics": result.score.to_dict() if result.score else None,
            "files": result.files,
        }, indent=2))
    else:
        for key, run in result.runs.items():
            status = "LOST" if run.dip_lost else "ok"
            color = "red" if run.dip_lost else "green"
            click.secho(f"{key} dip ({run.controller.value}): {status}", fg=color)
            click.echo(f"  Samples: {run.derived['samples']}, missing pixels: {len(run.raw_map.missing)}")
            click.echo(f"  Controller faults: {run.faults['controller_faults']}")
        if result.score is not None:
            click.echo(f"  RMSE: {result.score.rmse_mv:.3f} mV, PSNR: {result.score.psnr_db:.2f} dB")
        click.echo(f"Artifacts in {out_dir}")
    sys.exit(0 if result.ok else 1)


@cli.command()
@config_options
@click.option("--neg", "neg_map", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Negative dip map")
@click.option("--pos", "pos_map", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Positive dip map")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory")
def image(config_path, seed, settings, neg_map, pos_map, out_dir):
    """Combine two dip maps into the Phi* image."""
    try:
        config = load_config(config_path, seed, settings=settings)
        out = Path(out_dir)
        with RunTimer() as timer:
            result = compute_phi_star(
                read_matrix(neg_map), read_matrix(pos_map), config.sample.v_neg0, config.sample.delta_v0
            )
            write_matrix(out / PHI_FILE, result.values)
            write_pgm(out / PGM_FILE, result.values)
        RunManifest.generate("image", config, timer.duration_ms, out, [PHI_FILE, PGM_FILE]).save(out / MANIFEST_FILE)
    except (SqdmError, ValidationError) as e:
        fail(str(e))
    click.echo(f"Phi* {result.shape[1]}x{result.shape[0]} written to {out / PHI_FILE}")


@cli.command("score")
@click.argument("image_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("reference_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Write metrics.txt and error_map.txt here")
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
def score_cmd(image_path: str, reference_path: str, out_dir: Optional[str], output_format: str):
    """Score an image against a reference: MSE, RMSE and PSNR."""
    try:
        result = score(read_matrix(image_path), read_matrix(reference_path))
        if out_dir:
            result.save(Path(out_dir) / METRICS_FILE)
            write_matrix(Path(out_dir) / ERROR_MAP_FILE, result.error_map)
    except SqdmError as e:
        fail(str(e))
    if output_format == "json":
        click.echo(json.dumps(result.to_dict(), indent=2))
    else:
        click.echo(f"MSE:  {result.mse:.6e} V^2")
        click.echo(f"RMSE: {result.rmse_mv:.4f} mV")
        click.echo(f"PSNR: {result.psnr_db:.2f} dB")


@cli.command()
@config_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory")
@click.option("--dip", type=click.Choice(["neg", "pos", "both"]), default=None)
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
def sweep(config_path, seed, settings, out_dir, dip, output_format):
    """Run every combination of the configured sweep axes.

    Failing variants are recorded in their row; the sweep carries on.
    """
    try:
        config = load_config(config_path, seed, dip=dip, settings=settings)
        dips = list(DipSelector) if dip == "both" else [config.dip]
        result = run_sweep(config, out_dir, dips=dips)
    except (SqdmError, ValidationError) as e:
        fail(str(e))

    failed = [row for row in result.rows if row["status"] != "ok"]
    if output_format == "json":
        click.echo(json.dumps({
            "rows": result.rows,
            "throughput": result.throughput.to_dict(),
        }, indent=2, default=str))
    else:
        click.echo(f"{len(result.rows)} variants, {len(failed)} failed")
        click.echo(f"  Table: {Path(out_dir) / SWEEP_FILE}")
        click.echo(f"  Speedup over grid spectroscopy: {result.throughput.speedup:.1f}x")
    sys.exit(0 if not failed else 1)


@cli.command()
@config_options
@click.option("--controller", type=click.Choice([c.value for c in ControllerKind]), default=None)
@click.option("--dip", type=click.Choice(["neg", "pos", "both"]), default=None)
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
def validate(config_path, seed, settings, controller, dip, output_format):
    """Check a configuration against the controller design guidelines."""
    engine = ValidationEngine()
    try:
        schema_result = None
        if config_path:
            schema_result = engine.schema_validator.validate_config_file(Path(config_path))
            if not schema_result.valid:
                for error in schema_result.errors:
                    click.secho(f"  - {error}", fg="red", err=True)
                fail(f"{config_path} does not match the config schema")
        config = load_config(config_path, seed, controller, dip, settings=settings)
        dips = list(DipSelector) if dip == "both" else [config.dip]
        result = engine.validate(config, dips)
        result.schema_result = schema_result
        report = throughput(config)
    except (SqdmError, ValidationError) as e:
        fail(str(e))

    if output_format == "json":
        data = result.to_dict()
        data["throughput"] = report.to_dict()
        click.echo(json.dumps(data, indent=2))
    else:
        click.secho(result.summary(), fg="green" if result.valid else "red")
        for line in all_violations(result):
            click.echo(f"  - {line}")
        click.echo(
            f"Throughput: {report.scan_time_s / 3600:.2f} h scanning vs "
            f"{report.grid_time_s / 3600:.1f} h grid spectroscopy ({report.speedup:.1f}x)"
        )
    sys.exit(0 if result.valid else 1)


@cli.command("fit-spectrum")
@click.argument("samples_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--init", "init_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Initial spectrum params (default: built-in parameters)")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True,
              help="Fitted spectrum params file")
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
def fit_spectrum_cmd(samples_path: str, init_path: Optional[str], out_path: str, output_format: str):
    """Fit spectrum parameters to (V_b, delta_f) samples."""
    try:
        init = SpectrumParams.from_file(init_path) if init_path else SpectrumParams()
        result = fit_spectrum(load_samples(samples_path), init)
        result.params.to_file(out_path)
    except (SqdmError, ValidationError) as e:
        fail(str(e))
    if output_format == "json":
        click.echo(json.dumps(result.to_dict(), indent=2))
    else:
        click.echo(f"Cost {result.initial_cost:.3e} -> {result.cost:.3e} ({result.nfev} evaluations)")
        click.echo(f"Fitted parameters written to {out_path}")


def main():
    """Main entry point."""
    cli(obj={})


if __name__ == "__main__":
    main()
