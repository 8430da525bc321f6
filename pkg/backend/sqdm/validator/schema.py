"""
Schema Validation.

Checks run configurations against the pydantic models and run manifests
against the packaged JSON Schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import jsonschema
import yaml
from pydantic import ValidationError

from ..errors import ConfigError
from ..models import RunConfig

DEFAULT_MANIFEST_SCHEMA = Path(__file__).resolve().parent.parent / "schema" / "run_manifest_v1.json"


@dataclass
class SchemaError:
    """Represents a schema validation error."""

    path: str
    message: str
    suggestion: Optional[str] = None

    def __str__(self) -> str:
        result = f"[{self.path}] {self.message}"
        if self.suggestion:
            result += f" (Suggestion: {self.suggestion})"
        return result


@dataclass
class SchemaValidationResult:
    """Result of schema validation."""

    valid: bool
    errors: List[SchemaError] = field(default_factory=list)

    def add_error(self, path: str, message: str, suggestion: Optional[str] = None) -> None:
        """Add a validation error."""
        self.errors.append(SchemaError(path, message, suggestion))
        self.valid = False


class SchemaValidator:
    """
    Structural validation of configs and manifests.

    Config problems are reported per field with a suggestion where one is
    obvious; manifests are checked with jsonschema.
    """

    def __init__(self, schema_path: Optional[Path] = None):
        self.schema_path = schema_path or DEFAULT_MANIFEST_SCHEMA
        self._schema: Optional[Dict[str, Any]] = None

    @property
    def schema(self) -> Dict[str, Any]:
        """Load and cache the manifest schema."""
        if self._schema is None:
            with open(self.schema_path, "r", encoding="utf-8") as f:
                self._schema = json.load(f)
        return self._schema

    def validate_config(
        self,
        data: Dict[str, Any],
        base_dir: Optional[Path] = None,
    ) -> SchemaValidationResult:
        """Validate raw config data (flat or nested)."""
        result = SchemaValidationResult(valid=True)
        try:
            RunConfig.from_dict(data, base_dir=base_dir)
        except ValidationError as e:
            for error in e.errors():
                path = ".".join(str(loc) for loc in error["loc"]) or "root"
                result.add_error(path, error["msg"], self._get_suggestion_for_error(error))
        except (ConfigError, OSError) as e:
            result.add_error("root", str(e))
        return result

    def validate_config_file(self, path: Path) -> SchemaValidationResult:
        """Validate a YAML config file."""
        result = SchemaValidationResult(valid=True)
        if not path.exists():
            result.add_error(str(path), "File not found", "Check the file path")
            return result
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            result.add_error(str(path), f"YAML parse error: {e}", "Check YAML syntax")
            return result
        if not isinstance(data, dict):
            result.add_error(str(path), "Config must be a mapping of keys to values")
            return result
        return self.validate_config(data, base_dir=path.parent)

    def validate_manifest(self, manifest: Dict[str, Any]) -> SchemaValidationResult:
        """Validate a manifest dictionary against the JSON Schema."""
        result = SchemaValidationResult(valid=True)
        try:
            jsonschema.validate(manifest, self.schema)
        except jsonschema.ValidationError as e:
            path = ".".join(str(p) for p in e.absolute_path) or "root"
            result.add_error(path, e.message)
        except jsonschema.SchemaError as e:
            result.add_error("schema", f"Invalid schema: {e.message}", "Check the JSON Schema file")
        return result

    def _get_suggestion_for_error(self, error: Dict[str, Any]) -> Optional[str]:
        """Generate a suggestion for a pydantic validation error."""
        error_type = error.get("type", "")
        loc = error.get("loc", [])

        if error_type == "missing":
            name = loc[-1] if loc else "unknown"
            return f"Add the required key '{name}'"
        if error_type == "extra_forbidden":
            return "Remove the key or check its spelling"
        if error_type in ("greater_than", "greater_than_equal"):
            return "Use a larger value"
        if error_type == "enum":
            return "Use one of the listed values"
        return None
