"""
Plain-text artifact formats.

Matrices are comma-separated, row-major, one row per y-line. Key-value
files hold one `name = value` pair per line. Images are rendered as 8-bit
binary portable graymaps.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np

PathLike = Union[str, Path]


def write_matrix(path: PathLike, grid: np.ndarray) -> None:
    """Write a 2-D grid; NaN marks missing values."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, grid, delimiter=",", fmt="%.17g")


def read_matrix(path: PathLike) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def format_value(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def write_key_values(path: PathLike, values: Mapping[str, Any]) -> None:
    """Write `name = value` lines in insertion order."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    text = "".join(f"{key} = {format_value(value)}\n" for key, value in values.items())
    Path(path).write_text(text, encoding="utf-8")


def read_key_values(path: PathLike) -> Dict[str, str]:
    """Read `name = value` lines; values stay strings."""
    values: Dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or "=" not in line:
            continue
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def render_pgm(grid: np.ndarray) -> bytes:
    """
    Min-max normalized 8-bit graymap.

    A constant grid renders mid-gray; NaN pixels render black.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    finite = np.isfinite(grid)
    pixels = np.zeros(grid.shape, dtype=np.uint8)
    if finite.any():
        lo, hi = float(grid[finite].min()), float(grid[finite].max())
        if hi > lo:
            scaled = np.round((grid[finite] - lo) / (hi - lo) * 255.0)
        else:
            scaled = np.full(int(finite.sum()), 128.0)
        pixels[finite] = scaled.astype(np.uint8)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def write_pgm(path: PathLike, grid: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(render_pgm(grid))


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary graymap written by write_pgm."""
    data = Path(path).read_bytes()
    # header is exactly four tokens, then one whitespace byte before the pixels
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit graymaps are supported")
    pixels = np.frombuffer(data[pos + 1: pos + 1 + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f"{path}: expected {width * height} pixels, got {pixels.size}")
    return pixels.reshape(height, width)


def compute_file_checksum(path: PathLike) -> str:
    """MD5 hex digest of a file."""
    hasher = hashlib.md5()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(8192), b""):
            hasher.update(chunk)
    return hasher.hexdigest()
