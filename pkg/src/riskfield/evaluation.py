"""Prediction-accuracy metrics and parameter sweeps.

An ensemble is a set of trajectories sampled from one initial state
with per-member RNG streams, so generation order (or thread count)
never changes the members.  The median trajectory takes the
coordinate-wise median at each timestamp; deviations measure the
distance from median points to the reference path treated as a
polyline.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .course import Course, point_to_polyline
from .dynamics import VehicleState
from .errors import ValidationError
from .policy import ControlGrid, SamplerConfig, Trajectory, sample_trajectories
from .riskmodel import RiskParams

__all__ = [
    "Ensemble",
    "DeviationReport",
    "SweepLevel",
    "generate_ensemble",
    "median_trajectory",
    "deviation",
    "deviation_report",
    "velocity_error",
    "clearance",
    "sweep",
    "quantile_params",
    "DEFAULT_QUANTILES",
]

# Reference 5th/50th/95th percentiles of fitted weights, used as sweep
# defaults and as generating values in the synthetic test loops.
DEFAULT_QUANTILES = {
    "A": (0.248, 0.544, 0.939),
    "B": (0.000, 16.349, 110.864),
    "C": (0.000, 0.000, 0.025),
    "D": (0.000, 1.416, 11.827),
    "E": (14.233, 40.782, 99.543),
}

_LEVEL_INDEX = {"low": 0, "median": 1, "high": 2}


@dataclass
class Ensemble:
    """Trajectories sharing an initial state, step and horizon.

    `seed` is the base seed; member i was drawn from the stream
    trajectory_rng(seed, i).
    """

    trajectories: list
    seed: int

    def __post_init__(self):
        if not self.trajectories:
            raise ValidationError("ensemble must be nonempty")
        t0 = self.trajectories[0].times
        for traj in self.trajectories[1:]:
            if len(traj.times) != len(t0) or not np.array_equal(traj.times, t0):
                raise ValidationError("ensemble members must share timestamps")

    @property
    def n(self) -> int:
        return len(self.trajectories)

    @property
    def times(self) -> np.ndarray:
        return self.trajectories[0].times


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("RISKFIELD_THREADS", "1")))
    except ValueError:
        return 1


def generate_ensemble(
    s0: VehicleState,
    params: RiskParams,
    grid: ControlGrid,
    config: SamplerConfig,
    course: Course,
    n: int,
) -> Ensemble:
    """Sample n trajectories from s0 with per-member RNG streams.

    Member i draws from trajectory_rng(config.seed, i), so the ensemble
    is reproducible no matter how members are batched across threads
    (RISKFIELD_THREADS caps the worker count).
    """
    if n < 1:
        raise ValidationError("ensemble size must be >= 1")

    def block(indices) -> list:
        return sample_trajectories(s0, params, grid, config, course, indices)

    workers = min(_thread_count(), n)
    if workers > 1:
        splits = np.array_split(np.arange(n), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, splits))
        members = [t for part in parts for t in part]
    else:
        members = block(range(n))
    return Ensemble(members, seed=config.seed)


def median_trajectory(ensemble: Ensemble) -> Trajectory:
    """Coordinate-wise median state per timestamp across members.

    Even member counts average the two middle order statistics.
    Controls are the per-step medians, carried along for CSV output.
    """
    states = np.median([t.states for t in ensemble.trajectories], axis=0)
    controls = np.median([t.controls for t in ensemble.trajectories], axis=0)
    return Trajectory(ensemble.times.copy(), states, controls)


def _index_at(times: np.ndarray, horizon: float) -> int:
    idx = int(np.searchsorted(times, horizon - 1e-9))
    if idx >= len(times) or abs(times[idx] - horizon) > 1e-6:
        raise ValidationError(f"horizon {horizon} s is not on the time grid")
    return idx


def deviation(median: Trajectory, reference: Trajectory, horizons) -> dict:
    """Distance from the median point at each horizon to the reference path.

    The reference trajectory is treated as a polyline; the value at
    horizon t is the point-to-polyline minimum distance.
    """
    ref_line = reference.positions
    out = {}
    for h in horizons:
        idx = _index_at(median.times, float(h))
        out[float(h)] = float(point_to_polyline(median.positions[idx], ref_line))
    return out


@dataclass
class DeviationReport:
    """Per-horizon deviations across cases, with min/median/max rows."""

    horizons: tuple
    per_case: np.ndarray  # (n_cases, n_horizons)

    def __post_init__(self):
        self.per_case = np.atleast_2d(np.asarray(self.per_case, dtype=float))
        if self.per_case.shape[1] != len(self.horizons):
            raise ValidationError("per-case columns must match the horizons")
        if np.any(self.per_case < 0):
            raise ValidationError("deviations must be nonnegative")

    @property
    def minimum(self) -> np.ndarray:
        return self.per_case.min(axis=0)

    @property
    def median(self) -> np.ndarray:
        return np.median(self.per_case, axis=0)

    @property
    def maximum(self) -> np.ndarray:
        return self.per_case.max(axis=0)


def deviation_report(cases, horizons) -> DeviationReport:
    """Aggregate deviation() results for (median, reference) pairs."""
    horizons = tuple(float(h) for h in horizons)
    rows = []
    for med, ref in cases:
        d = deviation(med, ref, horizons)
        rows.append([d[h] for h in horizons])
    return DeviationReport(horizons, np.asarray(rows))


def velocity_error(ensemble: Ensemble, reference: Trajectory, horizon: float) -> float:
    """|median predicted speed - reference speed| at the horizon."""
    idx = _index_at(ensemble.times, float(horizon))
    ref_idx = _index_at(reference.times, float(horizon))
    if abs(ensemble.times[idx] - reference.times[ref_idx]) > 1e-9:
        raise ValidationError("ensemble and reference timestamps are misaligned")
    v_med = np.median([t.states[idx, 2] for t in ensemble.trajectories])
    return float(abs(v_med - reference.states[ref_idx, 2]))


def clearance(trajectory: Trajectory, course: Course) -> float:
    """Minimum distance from any trajectory point to any obstacle center."""
    if course.n_obstacles == 0:
        raise ValidationError("course has no obstacles")
    pos = trajectory.positions
    diff = pos[:, None, :] - course.obstacles[None, :, :]
    return float(np.sqrt(np.einsum("tkd,tkd->tk", diff, diff)).min())


def quantile_params(
    param: str, level: str, quantiles: dict | None = None
) -> RiskParams:
    """Weights with one parameter at a quantile level, the rest at medians."""
    q = quantiles or DEFAULT_QUANTILES
    if param not in q:
        raise ValidationError(f"unknown parameter {param!r}")
    if level not in _LEVEL_INDEX:
        raise ValidationError(f"unknown level {level!r}")
    values = {name: q[name][1] for name in ("A", "B", "C", "D", "E")}
    values[param] = q[param][_LEVEL_INDEX[level]]
    return RiskParams(**values)


@dataclass
class SweepLevel:
    """One sweep condition: the ensemble plus its summary statistics."""

    level: str
    params: RiskParams
    ensemble: Ensemble
    min_clearance: np.ndarray  # per trajectory
    rms_centerline: np.ndarray  # per trajectory
    accel_variance: np.ndarray  # per trajectory
    turn_profile: np.ndarray  # mean u2 per step across members

    @property
    def median_clearance(self) -> float:
        return float(np.median(self.min_clearance))

    @property
    def median_rms_centerline(self) -> float:
        return float(np.median(self.rms_centerline))


def _level_stats(level, params, ens, course) -> SweepLevel:
    min_clear = np.array([clearance(t, course) for t in ens.trajectories])
    rms = np.array(
        [
            float(np.sqrt(np.mean(course.pt_line_distance(t.positions) ** 2)))
            for t in ens.trajectories
        ]
    )
    accel_var = np.array([float(np.var(t.controls[:, 0])) for t in ens.trajectories])
    turn = np.mean([t.controls[:, 1] for t in ens.trajectories], axis=0)
    return SweepLevel(level, params, ens, min_clear, rms, accel_var, turn)


def sweep(
    param: str,
    course: Course,
    s0: VehicleState,
    config: SamplerConfig,
    n: int = 20,
    levels=("low", "median", "high"),
    quantiles: dict | None = None,
    grid: ControlGrid | None = None,
) -> dict:
    """Ensembles with one weight swept across its quantiles.

    For each level the swept parameter takes its quantile value and the
    others stay at their medians; n trajectories are generated with the
    shared seed so levels differ only through the weights.

    Returns {level: SweepLevel}.
    """
    grid = grid or ControlGrid.default()
    out = {}
    for level in levels:
        params = quantile_params(param, level, quantiles)
        ens = generate_ensemble(s0, params, grid, config, course, n)
        out[level] = _level_stats(level, params, ens, course)
    return out
