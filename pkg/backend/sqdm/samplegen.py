"""
Synthetic ground truth.

Builds an effective surface potential from Gaussian features over an
optional linear background and converts it into the dip maps that drive
the plant, by inverting the potential relation
Phi* = V_neg0 * (V+ - V-) / dV0 - V-.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError
from .models import Blob, PotentialMode, SampleSpec
from .plant import DipMaps

logger = logging.getLogger(__name__)

TRUTH_FILE = "phi_star_truth.txt"


def pixel_centers(spec: SampleSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Meshgrid (X, Y) of pixel centers in A, rows are y-lines."""
    xs = (np.arange(spec.width) + 0.5) * spec.pitch_x
    ys = (np.arange(spec.height) + 0.5) * spec.pitch_y
    return np.meshgrid(xs, ys)


def random_blobs(spec: SampleSpec, rng: np.random.Generator) -> List[Blob]:
    """Features with random centers, sizes and signed amplitudes."""
    blobs = []
    size = min(spec.extent_x, spec.extent_y)
    for _ in range(spec.random_blobs):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        blobs.append(Blob(
            x=float(rng.uniform(0.0, spec.extent_x)),
            y=float(rng.uniform(0.0, spec.extent_y)),
            sigma_x=float(rng.uniform(0.08, 0.2) * size),
            sigma_y=float(rng.uniform(0.08, 0.2) * size),
            amplitude_mv=float(sign * rng.uniform(20.0, 100.0)),
        ))
    return blobs


def gen_potential(spec: SampleSpec, seed: Optional[Union[int, np.random.SeedSequence]] = None) -> np.ndarray:
    """
    Potential grid in volts.

    Explicit blobs take precedence; without them spec.random_blobs
    features are drawn from the seed. The sum is scaled about zero so its
    peak-to-peak equals spec.total_variation_mv (unless that is None).

    Raises:
        ConfigError: the sample spec has no features, or a flat result would
            need rescaling.
    """
    blobs = list(spec.blobs)
    if not blobs and spec.random_blobs:
        blobs = random_blobs(spec, np.random.default_rng(seed))
    if not blobs and spec.ramp_x == 0 and spec.ramp_y == 0:
        raise ConfigError("Sample has no features: add blobs, random_blobs or a ramp")

    x, y = pixel_centers(spec)
    field_mv = spec.ramp_x * x + spec.ramp_y * y
    for blob in blobs:
        field_mv = field_mv + blob.amplitude_mv * np.exp(
            -0.5 * (((x - blob.x) / blob.sigma_x) ** 2 + ((y - blob.y) / blob.sigma_y) ** 2)
        )

    if spec.total_variation_mv is not None:
        span = float(np.ptp(field_mv))
        if span == 0.0:
            raise ConfigError("Potential is flat; cannot rescale to the total variation target")
        field_mv = field_mv * (spec.total_variation_mv / span)

    logger.debug(
        "Potential %dx%d from %d features, range [%.3f, %.3f] mV",
        spec.width, spec.height, len(blobs), float(field_mv.min()), float(field_mv.max()),
    )
    return field_mv / 1000.0


def potential_to_dipmaps(
    phi_star: np.ndarray,
    spec: SampleSpec,
    mode: Optional[PotentialMode] = None,
) -> DipMaps:
    """
    Dip maps that reproduce phi_star through the potential relation.

    shift_neg_only keeps the dip separation at dV0 and moves V- by -Phi*;
    split lets a fraction f of Phi* change the separation:
    V- = V_neg0 - (1 - f) Phi*, dV = dV0 (1 + f Phi* / V_neg0).
    """
    phi = np.atleast_2d(np.asarray(phi_star, dtype=float))
    mode = PotentialMode(mode or spec.mode)
    v0, dv0 = spec.v_neg0, spec.delta_v0

    if mode is PotentialMode.SHIFT_NEG_ONLY:
        v_neg = v0 - phi
        v_pos = v_neg + dv0
    else:
        if v0 == 0:
            raise ConfigError("split mode needs a non-zero v_neg0")
        f = spec.split_fraction
        v_neg = v0 - (1.0 - f) * phi
        v_pos = v_neg + dv0 * (1.0 + f * phi / v0)
    return DipMaps(extent_x=spec.extent_x, extent_y=spec.extent_y, v_neg=v_neg, v_pos=v_pos)


def gen_sample(
    spec: SampleSpec,
    seed: Optional[Union[int, np.random.SeedSequence]] = None,
) -> Tuple[np.ndarray, DipMaps]:
    """Potential grid and its dip maps."""
    phi = gen_potential(spec, seed)
    return phi, potential_to_dipmaps(phi, spec)
