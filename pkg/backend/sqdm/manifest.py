"""
Run Manifest.

Records everything needed to reproduce a run: the resolved configuration,
derived controller quantities, the produced files with checksums, fault
summaries and timing.
"""

from __future__ import annotations

import json
import logging
import subprocess
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from .artifacts import compute_file_checksum
from .errors import SqdmError
from .models import RunConfig

logger = logging.getLogger(__name__)

MANIFEST_VERSION = "sqdm-run-manifest/1.0"
TOOL_VERSION = "1.0.0"
MANIFEST_FILE = "manifest.txt"


@dataclass
class RunManifest:
    """Reproducibility record of one run."""

    command: str
    seed: int
    config: Dict[str, Any]
    generated_at: str
    duration_ms: int
    manifest_version: str = MANIFEST_VERSION
    tool_version: str = TOOL_VERSION
    derived: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    faults: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    metrics: Optional[Dict[str, Any]] = None
    throughput: Optional[Dict[str, Any]] = None
    git_commit: Optional[str] = None

    @classmethod
    def generate(
        cls,
        command: str,
        config: RunConfig,
        duration_ms: int,
        out_dir: Optional[Path] = None,
        files: Iterable[str] = (),
        derived: Optional[Dict[str, Dict[str, Any]]] = None,
        faults: Optional[Dict[str, Dict[str, Any]]] = None,
        metrics: Optional[Dict[str, Any]] = None,
        throughput: Optional[Dict[str, Any]] = None,
    ) -> "RunManifest":
        """Build a manifest; checksums are taken of the listed files under out_dir."""
        manifest = cls(
            command=command,
            seed=config.seed,
            config=config.to_flat_dict(),
            generated_at=datetime.now(timezone.utc).isoformat(),
            duration_ms=duration_ms,
            derived=dict(derived or {}),
            faults=dict(faults or {}),
            metrics=metrics,
            throughput=throughput,
        )
        if out_dir is not None:
            for name in sorted(set(files)):
                path = Path(out_dir) / name
                if path.exists():
                    manifest.files[name] = compute_file_checksum(path)
        manifest.git_commit = _get_git_commit()
        return manifest

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary; unset optional parts are left out."""
        result: Dict[str, Any] = {
            "manifest_version": self.manifest_version,
            "tool_version": self.tool_version,
            "generated_at": self.generated_at,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "derived": self.derived,
            "faults": self.faults,
            "files": self.files,
            "duration_ms": self.duration_ms,
        }
        if self.metrics is not None:
            result["metrics"] = self.metrics
        if self.throughput is not None:
            result["throughput"] = self.throughput
        if self.git_commit:
            result["git_commit"] = self.git_commit
        return result

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)

    def save(self, output_path: Path, validate: bool = True) -> None:
        """
        Write the manifest as JSON.

        Raises:
            SqdmError: the manifest does not match the packaged schema.
        """
        if validate:
            from .validator.schema import SchemaValidator

            result = SchemaValidator().validate_manifest(json.loads(self.to_json()))
            if not result.valid:
                raise SqdmError("Run manifest failed schema validation: " + "; ".join(map(str, result.errors)))
        output_path.parent.mkdir(parents=True, exist_ok=True)
        output_path.write_text(self.to_json(), encoding="utf-8")
        logger.debug("Manifest written to %s", output_path)

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            command=data["command"],
            seed=data["seed"],
            config=data["config"],
            generated_at=data["generated_at"],
            duration_ms=data["duration_ms"],
            manifest_version=data.get("manifest_version", MANIFEST_VERSION),
            tool_version=data.get("tool_version", TOOL_VERSION),
            derived=data.get("derived", {}),
            faults=data.get("faults", {}),
            files=data.get("files", {}),
            metrics=data.get("metrics"),
            throughput=data.get("throughput"),
            git_commit=data.get("git_commit"),
        )

    def run_config(self) -> RunConfig:
        """The configuration that produced this run."""
        return RunConfig.from_dict(self.config)


def _get_git_commit() -> Optional[str]:
    """Get current git commit hash if in a git repo."""
    try:
        result = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if result.returncode == 0:
            return result.stdout.strip()[:12]
    except (subprocess.SubprocessError, FileNotFoundError):
        pass
    return None


class RunTimer:
    """Context manager for timing a run."""

    def __init__(self):
        self.start_time: float = 0
        self.duration_ms: int = 0

    def __enter__(self) -> "RunTimer":
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, *args):
        self.duration_ms = int((time.perf_counter() - self.start_time) * 1000)
