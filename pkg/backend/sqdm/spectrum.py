"""
Frequency-shift spectrum model.

Delta f(V_b) is a capacitance parabola plus two charging dips. The
functions here evaluate the model and its derivative, locate the true
minimum of a dip, and fit the model to measured (V_b, Delta f) pairs.
All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq, least_squares, minimize_scalar

from .errors import FitConvergenceError, SpectrumError
from .models import DipSelector, SpectrumParams

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

PARAM_NAMES: Tuple[str, ...] = (
    "p1", "p2", "p3",
    "d_neg", "d_pos",
    "v_neg", "v_pos",
    "w_neg", "w_pos",
    "a1", "a2", "a3",
)

# exp() argument floor; exp(-700) is already far below any dip contribution
_EXP_FLOOR = -700.0


def g_shape(params: SpectrumParams, x: ArrayLike) -> ArrayLike:
    """Exponent polynomial of the positive dip."""
    x2 = np.square(x) if isinstance(x, np.ndarray) else x * x
    return x2 * (params.a1 + x2 * (params.a2 + x2 * params.a3))


def parabola(params: SpectrumParams, v: ArrayLike) -> ArrayLike:
    return (params.p1 * v + params.p2) * v + params.p3


def neg_dip(params: SpectrumParams, v: ArrayLike) -> ArrayLike:
    """Gaussian negative-dip component."""
    x = (v - params.v_neg) / params.w_neg
    if isinstance(x, np.ndarray):
        return params.d_neg * np.exp(-np.square(x))
    return params.d_neg * math.exp(-x * x)


def pos_dip(params: SpectrumParams, v: ArrayLike) -> ArrayLike:
    """exp(-g) positive-dip component."""
    x = (v - params.v_pos) / params.w_pos
    if isinstance(x, np.ndarray):
        return params.d_pos * np.exp(np.maximum(-g_shape(params, x), _EXP_FLOOR))
    return params.d_pos * math.exp(max(-g_shape(params, x), _EXP_FLOOR))


def dip_component(params: SpectrumParams, dip: DipSelector, v: ArrayLike) -> ArrayLike:
    if DipSelector(dip) is DipSelector.NEGATIVE:
        return neg_dip(params, v)
    return pos_dip(params, v)


def eval_spectrum(params: SpectrumParams, v_b: ArrayLike) -> ArrayLike:
    """Delta f (Hz) at bias v_b (V): parabola plus both dips."""
    if isinstance(v_b, (list, tuple)):
        v_b = np.asarray(v_b, dtype=float)
    return parabola(params, v_b) + neg_dip(params, v_b) + pos_dip(params, v_b)


def eval_derivative(params: SpectrumParams, v_b: ArrayLike) -> ArrayLike:
    """Closed-form dDelta f/dV_b (Hz/V)."""
    if isinstance(v_b, (list, tuple)):
        v_b = np.asarray(v_b, dtype=float)
    slope = 2.0 * params.p1 * v_b + params.p2

    xn = (v_b - params.v_neg) / params.w_neg
    xp = (v_b - params.v_pos) / params.w_pos
    # g'(x) = 2 a1 x + 4 a2 x^3 + 6 a3 x^5
    xp2 = xp * xp
    g_prime = xp * (2.0 * params.a1 + xp2 * (4.0 * params.a2 + 6.0 * params.a3 * xp2))
    neg = neg_dip(params, v_b) * (-2.0 * xn / params.w_neg)
    pos = pos_dip(params, v_b) * (-g_prime / params.w_pos)
    return slope + neg + pos


def eval_curvature(params: SpectrumParams, v_b: float, step: float = 1e-6) -> float:
    """d2Delta f/dV_b2 (Hz/V^2) by central difference of eval_derivative."""
    return float(eval_derivative(params, v_b + step) - eval_derivative(params, v_b - step)) / (2.0 * step)


class SpectrumKernel:
    """
    Scalar spectrum evaluation with movable dip centers.

    Used inside the sample loop, where the dips follow the map at every
    step and rebuilding a SpectrumParams per sample would dominate.
    """

    __slots__ = ("p1", "p2", "p3", "d_neg", "d_pos", "inv_w_neg", "inv_w_pos", "a1", "a2", "a3")

    def __init__(self, params: SpectrumParams):
        self.p1, self.p2, self.p3 = params.p1, params.p2, params.p3
        self.d_neg, self.d_pos = params.d_neg, params.d_pos
        self.inv_w_neg = 1.0 / params.w_neg
        self.inv_w_pos = 1.0 / params.w_pos
        self.a1, self.a2, self.a3 = params.a1, params.a2, params.a3

    def value(self, v_b: float, v_neg: float, v_pos: float) -> float:
        xn = (v_b - v_neg) * self.inv_w_neg
        xp = (v_b - v_pos) * self.inv_w_pos
        xp2 = xp * xp
        g = xp2 * (self.a1 + xp2 * (self.a2 + xp2 * self.a3))
        return (
            (self.p1 * v_b + self.p2) * v_b + self.p3
            + self.d_neg * math.exp(-xn * xn)
            + self.d_pos * math.exp(max(-g, _EXP_FLOOR))
        )


def true_dip_minimum(params: SpectrumParams, dip: DipSelector) -> float:
    """
    Argmin of Delta f within two widths of the selected dip.

    A bounded scalar search brackets the minimum; the derivative root is
    then polished with brentq so the result is a sign change of
    eval_derivative to machine precision.

    Raises:
        SpectrumError: the selected dip has zero depth.
    """
    depth, center, width = params.dip(dip)
    if depth == 0:
        raise SpectrumError(f"{DipSelector(dip).value} dip is flat (depth 0); no minimum to track")

    lo, hi = center - 2.0 * width, center + 2.0 * width
    found = minimize_scalar(
        lambda v: eval_spectrum(params, v),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12 * max(1.0, abs(center))},
    )
    v_min = float(found.x)

    delta = 1e-4 * width
    a, b = max(lo, v_min - delta), min(hi, v_min + delta)
    fa, fb = eval_derivative(params, a), eval_derivative(params, b)
    if fa < 0.0 < fb:
        v_min = brentq(lambda v: eval_derivative(params, v), a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    else:
        logger.debug("No derivative sign change around %.9f V; keeping bounded search result", v_min)
    return float(v_min)


@dataclass
class FitResult:
    """Outcome of a spectrum fit."""

    params: SpectrumParams
    cost: float
    initial_cost: float
    nfev: int
    free_parameters: List[str]

    def to_dict(self) -> dict:
        return {
            "params": self.params.model_dump(),
            "cost": self.cost,
            "initial_cost": self.initial_cost,
            "nfev": self.nfev,
            "free_parameters": list(self.free_parameters),
        }


def _vector_model(theta: np.ndarray, v: np.ndarray) -> np.ndarray:
    p1, p2, p3, d_neg, d_pos, v_neg, v_pos, w_neg, w_pos, a1, a2, a3 = theta
    xn = (v - v_neg) / w_neg
    xp = (v - v_pos) / w_pos
    xp2 = xp * xp
    g = xp2 * (a1 + xp2 * (a2 + xp2 * a3))
    return (
        (p1 * v + p2) * v + p3
        + d_neg * np.exp(-xn * xn)
        + d_pos * np.exp(np.maximum(-g, _EXP_FLOOR))
    )


def fit_spectrum(
    samples: Iterable[Sequence[float]],
    init: SpectrumParams,
    max_nfev: int = 20000,
) -> FitResult:
    """
    Least-squares fit of all spectrum parameters.

    Levenberg-Marquardt (damped Gauss-Newton, finite-difference Jacobian).
    Parameters of a dip whose initial depth is zero are held fixed, since
    a flat dip contributes nothing and its position and width are not
    identifiable.

    Raises:
        SpectrumError: too few samples or invalid fitted parameters.
        FitConvergenceError: no convergence within max_nfev evaluations;
            carries the best parameters found so far.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise SpectrumError("samples must be (V_b, delta_f) pairs")
    v, y = data[:, 0], data[:, 1]

    theta0 = np.array([getattr(init, name) for name in PARAM_NAMES], dtype=float)
    frozen = set()
    if init.d_neg == 0:
        frozen.update({"d_neg", "v_neg", "w_neg"})
    if init.d_pos == 0:
        frozen.update({"d_pos", "v_pos", "w_pos", "a1", "a2", "a3"})
    free = [i for i, name in enumerate(PARAM_NAMES) if name not in frozen]
    if len(v) < len(free):
        raise SpectrumError(f"need at least {len(free)} samples, got {len(v)}")

    def residuals(free_theta: np.ndarray) -> np.ndarray:
        theta = theta0.copy()
        theta[free] = free_theta
        return _vector_model(theta, v) - y

    initial_cost = 0.5 * float(np.sum(residuals(theta0[free]) ** 2))
    fit = least_squares(
        residuals,
        theta0[free],
        method="lm",
        x_scale="jac",
        ftol=1e-12,
        xtol=1e-12,
        gtol=1e-12,
        max_nfev=max_nfev,
    )

    theta = theta0.copy()
    theta[free] = fit.x
    values = dict(zip(PARAM_NAMES, (float(t) for t in theta)))
    # a dip can only flip sign through zero; report it flat
    values["d_neg"] = min(values["d_neg"], 0.0)
    values["d_pos"] = min(values["d_pos"], 0.0)
    values["w_neg"] = abs(values["w_neg"])
    values["w_pos"] = abs(values["w_pos"])
    try:
        params = SpectrumParams(**values)
    except ValueError as e:
        raise SpectrumError(f"fit produced invalid parameters: {e}") from e

    cost = float(fit.cost)
    logger.info("Spectrum fit: cost %.3e -> %.3e after %d evaluations", initial_cost, cost, fit.nfev)
    if fit.status <= 0:
        raise FitConvergenceError(
            f"spectrum fit did not converge: {fit.message}", best=params, cost=cost
        )
    if cost > initial_cost:
        # never hand back something worse than the start
        return FitResult(init, initial_cost, initial_cost, int(fit.nfev), [PARAM_NAMES[i] for i in free])
    return FitResult(params, cost, initial_cost, int(fit.nfev), [PARAM_NAMES[i] for i in free])


def load_samples(path: Union[str, Path]) -> np.ndarray:
    """Read comma-separated (V_b, delta_f) pairs; '#' lines are comments."""
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] < 2:
        raise SpectrumError(f"{path}: expected two columns (V_b, delta_f)")
    return data[:, :2]
