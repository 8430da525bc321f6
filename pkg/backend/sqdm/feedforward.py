"""
Previous-line feedforward.

The bias applied along a line is buffered against the tip x-position and
replayed, mean filtered, on the next line in the same direction. The
replay is looked up by position rather than by time so a varying scan
speed within a line stays aligned. Feedforward is expressed relative to
the controller output at the moment it is enabled, so the integrator only
corrects the difference between consecutive lines.

By default the buffer does not hold the applied bias itself but the
operating point it implies: the applied bias minus the tracking error the
controller reports, stored at the position where that bias was applied one
loop delay earlier. Replaying the applied bias makes every line inherit
the tracking error of the line before, which adds up over a scan.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .artifacts import write_matrix
from .errors import FeedforwardError
from .models import FeedforwardConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackingCorrection:
    """
    Bias offset from the operating point, read from the controller error.

    Near the operating point the error is -sensitivity * (V_b - V_op),
    with the slope at the reference for slope tracking and the curvature at
    the minimum for ESC. The estimate is limited to +-limit and belongs to
    the bias applied `lag` seconds before the error was read.
    """

    sensitivity: float
    limit: float
    lag: float = 0.0

    def deviation(self, error: float) -> float:
        if self.sensitivity == 0.0 or not math.isfinite(error):
            return 0.0
        return min(max(-error / self.sensitivity, -self.limit), self.limit)

    def operating_point(self, v_b: float, error: float) -> float:
        return v_b - self.deviation(error)

    def lag_steps(self, t_s: float) -> int:
        return int(round(self.lag / t_s))


class LineBuffer:
    """Samples of the line being scanned and of the previous line."""

    def __init__(self, window_n: int = 1, baseline: float = 0.0):
        if window_n < 1:
            raise FeedforwardError(f"window_n must be >= 1, got {window_n}")
        self.n = int(window_n)
        self.baseline = float(baseline)
        self.enabled = False
        self.line_index = 0
        self.curr_x: List[float] = []
        self.curr_v: List[float] = []
        self.prev_x = np.empty(0)
        self.prev_v = np.empty(0)
        self._prefix = np.zeros(1)

    def __len__(self) -> int:
        return len(self.curr_x)

    def record(self, x: float, v_b_total: float) -> None:
        self.curr_x.append(float(x))
        self.curr_v.append(float(v_b_total))

    def advance(self) -> None:
        """Current line becomes the previous line."""
        if not self.curr_x:
            raise FeedforwardError(f"Line {self.line_index} has no samples to feed forward")
        x = np.asarray(self.curr_x)
        v = np.asarray(self.curr_v)
        order = np.argsort(x, kind="stable")
        self.prev_x = x[order]
        self.prev_v = v[order]
        self._prefix = np.concatenate(([0.0], np.cumsum(self.prev_v)))
        self.curr_x = []
        self.curr_v = []
        self.line_index += 1

    def enable(self, baseline: float) -> None:
        if self.line_index < 1:
            raise FeedforwardError("Feedforward needs at least one scanned line")
        self.enabled = True
        self.baseline = float(baseline)

    def _window_sum(self, lo: int, hi: int) -> float:
        """Sum over indices lo..hi-1 with out-of-range indices clamped to the ends."""
        count = len(self.prev_v)
        lo_c, hi_c = max(lo, 0), min(hi, count)
        total = float(self._prefix[hi_c] - self._prefix[lo_c])
        total += (lo_c - lo) * float(self.prev_v[0])
        total += (hi - hi_c) * float(self.prev_v[-1])
        return total

    def query(self, x: float) -> float:
        """Mean of the n previous-line samples around the one nearest to x, minus the baseline."""
        if not self.enabled or len(self.prev_x) == 0:
            return 0.0
        idx = int(np.searchsorted(self.prev_x, x))
        if idx >= len(self.prev_x):
            idx = len(self.prev_x) - 1
        elif idx > 0 and (x - self.prev_x[idx - 1]) <= (self.prev_x[idx] - x):
            idx -= 1
        lo = idx - (self.n - 1) // 2
        return self._window_sum(lo, lo + self.n) / self.n - self.baseline

    def to_matrix(self) -> np.ndarray:
        """Previous line as (x, V_b) rows."""
        return np.column_stack((self.prev_x, self.prev_v))

    def dump(self, path: Union[str, Path]) -> None:
        write_matrix(path, self.to_matrix())


def ff_record(buf: LineBuffer, x: float, v_b_total: float) -> LineBuffer:
    buf.record(x, v_b_total)
    return buf


def ff_advance_line(buf: LineBuffer) -> LineBuffer:
    buf.advance()
    return buf


def ff_query(buf: LineBuffer, x: float) -> float:
    return buf.query(x)


class PreviousLineFeedforward:
    """
    One LineBuffer per scan direction.

    Disabled feedforward returns exactly 0.0, so a run without it follows
    the pure feedback trajectory. With t_s given, the mean filter spans
    at least window_time seconds of previous-line samples.
    """

    def __init__(self, cfg: FeedforwardConfig, back_and_forth: bool = True, t_s: Optional[float] = None):
        self.cfg = cfg
        self.window_samples = window_samples(cfg, t_s)
        self.buffers = {True: LineBuffer(self.window_samples)}
        if back_and_forth:
            self.buffers[False] = LineBuffer(self.window_samples)
        self.enabled = False
        self.baseline: Optional[float] = None
        self.enabled_at: Optional[float] = None
        self.enabled_line: Optional[int] = None

    def _buffer(self, forward: bool) -> LineBuffer:
        return self.buffers.get(bool(forward), self.buffers[True])

    def record(self, forward: bool, x: float, v_b_total: float) -> None:
        if self.cfg.enabled:
            self._buffer(forward).record(x, v_b_total)

    def end_pass(self, forward: bool) -> None:
        if self.cfg.enabled:
            self._buffer(forward).advance()

    def maybe_enable(self, line: int, v_b_c: float, t: float) -> bool:
        """Enable at the start of line `enabled_after_lines`; returns True when it switches on."""
        if not self.cfg.enabled or self.enabled or line < self.cfg.enabled_after_lines:
            return False
        for buffer in self.buffers.values():
            buffer.enable(v_b_c)
        self.enabled = True
        self.baseline = float(v_b_c)
        self.enabled_at = float(t)
        self.enabled_line = int(line)
        logger.info("Feedforward enabled at line %d (t=%.3f s, baseline %.6f V)", line, t, v_b_c)
        return True

    def query(self, forward: bool, x: float) -> float:
        if not self.enabled:
            return 0.0
        return self._buffer(forward).query(x)


def window_samples(cfg: FeedforwardConfig, t_s: Optional[float] = None) -> int:
    """Mean filter length: window_n, widened to window_time / t_s when both are set."""
    if cfg.window_time is None or not t_s:
        return cfg.window_n
    return max(cfg.window_n, int(round(cfg.window_time / t_s)))
