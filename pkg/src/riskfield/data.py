"""Driving-log ingestion, control derivation, and obstacle segmentation.

Logs are CSV files with header ``t,x,y,v,psi[,u1,u2]``; times in
seconds, strictly increasing.  Controls, when absent, are derived
from state finite differences.  Logs can also be synthesized from a
known model, giving ground truth for parameter-recovery tests.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .course import Course
from .dynamics import VehicleState
from .errors import FormatError, ValidationError
from .policy import ControlGrid, SamplerConfig, sample_trajectory, trajectory_rng
from .riskmodel import RiskParams

__all__ = [
    "DriverLog",
    "Segment",
    "load_log",
    "save_log",
    "derive_controls",
    "segment_by_obstacle",
    "segment_manifest",
    "synthesize",
]

_BASE_COLUMNS = ["t", "x", "y", "v", "psi"]
_CONTROL_COLUMNS = ["u1", "u2"]


@dataclass
class DriverLog:
    """Timestamped states, optionally with raw control channels."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray | None = None
    driver: str = ""
    trial: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape != (len(self.times), 4):
            raise ValidationError("states must be (len(times), 4)")
        if len(self.times) == 0:
            raise ValidationError("log must be nonempty")
        if not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(self.states)):
            raise ValidationError("log values must be finite")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        if self.controls is not None:
            self.controls = np.asarray(self.controls, dtype=float)
            if self.controls.shape != (len(self.times), 2):
                raise ValidationError("controls must be (len(times), 2)")
            if not np.all(np.isfinite(self.controls)):
                raise ValidationError("controls must be finite")

    @property
    def n_rows(self) -> int:
        return len(self.times)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]


def load_log(path) -> DriverLog:
    """Parse and validate a log CSV; errors name the offending line."""
    src = str(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(src, "line 1", "empty file")
        header = [h.strip() for h in header]
        if header == _BASE_COLUMNS:
            has_controls = False
        elif header == _BASE_COLUMNS + _CONTROL_COLUMNS:
            has_controls = True
        else:
            raise FormatError(
                src, "line 1", f"expected header t,x,y,v,psi[,u1,u2], got {header}"
            )
        width = 7 if has_controls else 5
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise FormatError(src, f"line {lineno}", f"expected {width} fields")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise FormatError(src, f"line {lineno}", "non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError(src, f"line {lineno}", "non-finite value")
            if rows and vals[0] <= rows[-1][0]:
                raise FormatError(
                    src, f"line {lineno}", "timestamp does not increase"
                )
            rows.append(vals)
    if not rows:
        raise FormatError(src, "line 2", "no data rows")
    arr = np.asarray(rows)
    return DriverLog(
        arr[:, 0], arr[:, 1:5], arr[:, 5:7] if has_controls else None
    )


def save_log(log: DriverLog, path) -> None:
    """Write a log in canonical form (repr floats, LF endings).

    load_log(save_log(x)) round-trips byte-identically for files that
    were themselves produced by save_log.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if log.controls is not None:
            writer.writerow(_BASE_COLUMNS + _CONTROL_COLUMNS)
            for t, s, u in zip(log.times, log.states, log.controls):
                writer.writerow([repr(float(v)) for v in (t, *s, *u)])
        else:
            writer.writerow(_BASE_COLUMNS)
            for t, s in zip(log.times, log.states):
                writer.writerow([repr(float(v)) for v in (t, *s)])


def _wrap_angle(delta: np.ndarray) -> np.ndarray:
    # maps to (-pi, pi]
    return np.pi - np.mod(np.pi - delta, 2.0 * np.pi)


def derive_controls(log: DriverLog) -> np.ndarray:
    """Controls from state finite differences, one row per log row.

    u1 = dv/dt, u2 = wrapped dpsi/dt between consecutive rows; the last
    row reuses the previous control.
    """
    if log.n_rows < 2:
        raise ValidationError("need at least 2 rows to derive controls")
    dt = np.diff(log.times)
    u1 = np.diff(log.states[:, 2]) / dt
    u2 = _wrap_angle(np.diff(log.states[:, 3])) / dt
    ctrl = np.column_stack([u1, u2])
    return np.vstack([ctrl, ctrl[-1]])


@dataclass
class Segment:
    """Contiguous slice of a log attributed to one obstacle encounter."""

    log: DriverLog = field(repr=False)
    start: int
    stop: int
    obstacle_index: int
    s_obstacle: float
    window: tuple

    def __post_init__(self):
        if not (0 <= self.start < self.stop <= self.log.n_rows):
            raise ValidationError("segment range outside the parent log")

    @property
    def n_rows(self) -> int:
        return self.stop - self.start

    @property
    def times(self) -> np.ndarray:
        return self.log.times[self.start : self.stop]

    @property
    def states(self) -> np.ndarray:
        return self.log.states[self.start : self.stop]


def segment_by_obstacle(
    log: DriverLog,
    course: Course,
    window_before: float = 100.0,
    window_after: float = 50.0,
) -> list[Segment]:
    """One segment per contiguous pass through each obstacle's arc window.

    A row belongs to obstacle k when its arc coordinate lies within
    [s_k - window_before, s_k + window_after] (wrapping on closed
    courses).  A single-lap log therefore yields one segment per
    obstacle; multi-lap logs yield one per pass.  Rows may appear in
    several segments when windows overlap.  Obstacles whose window
    catches no rows are skipped with a warning.
    """
    if course.n_obstacles == 0:
        raise ValidationError("course has no obstacles")
    if window_before < 0 or window_after < 0:
        raise ValidationError("windows must be nonnegative")
    s_rows = course.arc_position(log.positions)
    span = window_before + window_after
    segments = []
    for k, s_obs in enumerate(course.obstacle_arcs()):
        lo = s_obs - window_before
        if course.closed:
            inside = np.mod(s_rows - lo, course.length) <= span
        else:
            inside = (s_rows >= lo) & (s_rows <= s_obs + window_after)
        if not inside.any():
            warnings.warn(f"obstacle {k}: no rows in its arc window; skipped")
            continue
        padded = np.concatenate([[False], inside, [False]])
        edges = np.flatnonzero(np.diff(padded.astype(int)))
        for a, b in zip(edges[::2], edges[1::2]):
            segments.append(
                Segment(log, int(a), int(b), k, float(s_obs), (lo, s_obs + window_after))
            )
    return segments


def segment_manifest(segments: list[Segment]) -> list[dict]:
    return [
        {
            "obstacle": seg.obstacle_index,
            "rows": [seg.start, seg.stop],
            "arc_window": [seg.window[0], seg.window[1]],
        }
        for seg in segments
    ]


def synthesize(
    params: RiskParams,
    course: Course,
    s0: VehicleState,
    config: SamplerConfig,
    grid: ControlGrid | None = None,
    rng=None,
) -> DriverLog:
    """Sample a trajectory and package it as a log with controls attached.

    The final row repeats the last control (it has no step of its own).
    Ground truth for parameter-recovery tests: with the same seed the
    log is identical.
    """
    grid = grid or ControlGrid.default()
    if rng is None:
        rng = trajectory_rng(config.seed, 0)
    traj = sample_trajectory(s0, params, grid, config, course, rng=rng)
    if len(traj.controls):
        controls = np.vstack([traj.controls, traj.controls[-1]])
    else:
        controls = np.zeros((1, 2))
    return DriverLog(
        traj.times,
        traj.states,
        controls,
        driver="synthetic",
        trial=f"seed={config.seed}",
    )
