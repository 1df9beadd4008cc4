"""Softmax control policy over a discrete (acceleration, turn-rate) grid.

A candidate control is scored by the risk of the state it previews to
plus its own cost; the choice distribution is the softmax of the
negated scores.  Trajectories are sampled by repeatedly previewing
every grid cell, drawing one control, and advancing the true state by
one time step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .course import Course
from .dynamics import (
    Control,
    IntegratorConfig,
    PreviewBasis,
    VehicleState,
    propagate,
)
from .errors import FormatError, ValidationError
from .riskmodel import DEFAULT_FEATURES, RiskParams

__all__ = [
    "ControlGrid",
    "ActionDistribution",
    "SamplerConfig",
    "Trajectory",
    "action_distribution",
    "sample_index",
    "sample_control",
    "sample_trajectory",
    "trajectory_rng",
]

_TRAJECTORY_HEADER = ["t", "x", "y", "v", "psi", "u1", "u2"]


def _arithmetic(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step)) + 1
    vals = lo + np.arange(n) * step
    if n < 1 or not np.all(np.diff(vals) > 0):
        raise ValidationError("grid axis must be strictly increasing")
    return vals


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Cartesian grid of candidate controls.

    Cells are ordered u1-major: cell j = i1 * len(u2_values) + i2.
    Axis values are built as min + index*step so they are exactly
    reproducible.
    """

    u1_values: np.ndarray
    u2_values: np.ndarray

    def __post_init__(self):
        for name in ("u1_values", "u2_values"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if vals.ndim != 1 or vals.size == 0:
                raise ValidationError(f"{name} must be a nonempty 1-d array")
            if not np.all(np.isfinite(vals)):
                raise ValidationError(f"{name} must be finite")
            if vals.size > 1 and not np.all(np.diff(vals) > 0):
                raise ValidationError(f"{name} must be strictly increasing")
            vals.setflags(write=False)
            object.__setattr__(self, name, vals)

    @classmethod
    def default(cls) -> "ControlGrid":
        """21 accelerations in [-1, 1] x 21 turn rates in [-0.5, 0.5]."""
        return cls(_arithmetic(-1.0, 1.0, 0.1), _arithmetic(-0.5, 0.5, 0.05))

    @classmethod
    def regular(cls, u1_min, u1_max, u1_step, u2_min, u2_max, u2_step):
        return cls(
            _arithmetic(u1_min, u1_max, u1_step),
            _arithmetic(u2_min, u2_max, u2_step),
        )

    @property
    def n_cells(self) -> int:
        return self.u1_values.size * self.u2_values.size

    @property
    def cells(self) -> np.ndarray:
        """(n_cells, 2) array of (u1, u2) pairs in cell order."""
        g1, g2 = np.meshgrid(self.u1_values, self.u2_values, indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel()])

    def cell_control(self, index: int) -> Control:
        n2 = self.u2_values.size
        i1, i2 = divmod(int(index), n2)
        return Control(float(self.u1_values[i1]), float(self.u2_values[i2]))

    def snap_index(self, controls) -> np.ndarray:
        """Nearest cell per control, Euclidean in per-axis index units."""
        controls = np.asarray(controls, dtype=float)
        scalar = controls.ndim == 1
        flat = np.atleast_2d(controls)
        i1 = self._snap_axis(flat[:, 0], self.u1_values)
        i2 = self._snap_axis(flat[:, 1], self.u2_values)
        idx = i1 * self.u2_values.size + i2
        return int(idx[0]) if scalar else idx.reshape(controls.shape[:-1])

    @staticmethod
    def _snap_axis(vals, axis_vals):
        pos = np.searchsorted(axis_vals, vals)
        pos = np.clip(pos, 1, len(axis_vals) - 1) if len(axis_vals) > 1 else pos * 0
        left = axis_vals[np.maximum(pos - 1, 0)]
        right = axis_vals[np.minimum(pos, len(axis_vals) - 1)]
        take_right = (vals - left) > (right - vals)
        return np.clip(np.maximum(pos - 1, 0) + take_right, 0, len(axis_vals) - 1)


@dataclass(frozen=True, eq=False)
class ActionDistribution:
    """Choice probabilities aligned to the cells of a ControlGrid."""

    probabilities: np.ndarray
    grid: ControlGrid

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (self.grid.n_cells,):
            raise ValidationError("probabilities must align with the grid cells")
        if not np.all(np.isfinite(p)) or np.any(p <= 0.0):
            raise ValidationError("probabilities must be finite and positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("probabilities must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)


@dataclass(frozen=True)
class SamplerConfig:
    """Preview horizon, step length, step count and base seed."""

    preview: float = 1.2
    dt: float = 0.1
    n_steps: int = 1
    seed: int = 0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if not (math.isfinite(self.preview) and self.preview > 0):
            raise ValidationError("preview must be positive")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError("dt must be positive")
        if self.n_steps < 0:
            raise ValidationError("n_steps must be >= 0")


@dataclass
class Trajectory:
    """Sampled path: states at times 0, dt, ..., n*dt plus chosen controls.

    `controls[i]` is the control applied over [times[i], times[i+1]);
    the CSV form repeats the final control on the last row.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1, 2)
        n = len(self.times)
        if self.states.shape != (n, 4):
            raise ValidationError("states must be (len(times), 4)")
        if len(self.controls) not in (max(n - 1, 0), 0):
            raise ValidationError("controls must have one row per step")

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def save_csv(self, path) -> None:
        rows = np.column_stack([self.times[:, None], self.states])
        if len(self.controls):
            ctrl = np.vstack([self.controls, self.controls[-1]])
        else:
            ctrl = np.zeros((len(self.times), 2))
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_TRAJECTORY_HEADER)
            for row, c in zip(rows, ctrl):
                writer.writerow([repr(float(v)) for v in (*row, *c)])

    @classmethod
    def load_csv(cls, path) -> "Trajectory":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != _TRAJECTORY_HEADER:
                raise FormatError(str(path), "line 1", "bad trajectory header")
            data = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 7:
                    raise FormatError(str(path), f"line {lineno}", "expected 7 fields")
                try:
                    data.append([float(v) for v in row])
                except ValueError as e:
                    raise FormatError(str(path), f"line {lineno}", str(e)) from e
        if not data:
            raise FormatError(str(path), "line 2", "empty trajectory")
        arr = np.asarray(data)
        return cls(arr[:, 0], arr[:, 1:5], arr[:-1, 5:7] if len(arr) > 1 else arr[:0, 5:7])


def trajectory_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for one trajectory of an ensemble.

    Streams are split as Philox(SeedSequence(seed, spawn_key=(index,))),
    so member `index` is reproducible regardless of generation order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _preview_grid(states_arr, grid_cells, preview, step, basis):
    # The affine basis applies per state (v above its floor); rows that
    # could brake to a stop within the preview integrate directly.
    if basis is not None:
        v = states_arr[..., 2]
        if np.all(v >= basis.v_floor):
            return basis.states_after(states_arr)
        if states_arr.ndim > 1:
            out = basis.states_after(states_arr)
            mask = v < basis.v_floor
            out[mask] = propagate(
                states_arr[mask][..., None, :], grid_cells, preview, step
            )
            return out
    return propagate(states_arr[..., None, :], grid_cells, preview, step)


def _scores(states_arr, theta_p, theta_q, grid_cells, g_feats, preview, course,
            features, step, basis=None):
    previewed = _preview_grid(states_arr, grid_cells, preview, step, basis)
    f = features.state_features(previewed, course)
    return -(f @ theta_p + g_feats @ theta_q)


def _normalize(z) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    # floor keeps entries strictly positive when the spread underflows exp
    p = np.maximum(p, np.finfo(float).tiny)
    return p / p.sum(axis=-1, keepdims=True)


def action_distribution(
    state: VehicleState,
    params: RiskParams,
    grid: ControlGrid,
    preview: float,
    course: Course,
    features=DEFAULT_FEATURES,
    integrator: IntegratorConfig = IntegratorConfig(),
) -> ActionDistribution:
    """Softmax choice distribution over the grid at one state.

    Each cell's score is the risk of the state it previews to over
    `preview` seconds plus the cell's control cost; probabilities are
    proportional to exp(-score), computed with max subtraction.
    """
    cells = grid.cells
    z = _scores(
        state.as_array(),
        params.risk_weights(),
        params.cost_weights(),
        cells,
        features.control_features(cells),
        preview,
        course,
        features,
        integrator.step,
    )
    return ActionDistribution(_normalize(z), grid)


def sample_index(dist: ActionDistribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of a cell index, in grid cell order."""
    cdf = np.cumsum(dist.probabilities)
    cdf[-1] = 1.0
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def sample_control(dist: ActionDistribution, rng: np.random.Generator) -> Control:
    return dist.grid.cell_control(sample_index(dist, rng))


def sample_trajectory(
    s0: VehicleState,
    params: RiskParams,
    grid: ControlGrid,
    config: SamplerConfig,
    course: Course,
    rng: np.random.Generator | None = None,
    features=DEFAULT_FEATURES,
) -> Trajectory:
    """Sample one trajectory of config.n_steps steps from s0.

    At each step every grid control is previewed to config.preview
    seconds, one control is drawn from the softmax distribution, and
    the true state advances by config.dt under it.  With rng=None the
    stream is trajectory_rng(config.seed, 0).
    """
    if rng is None:
        rng = trajectory_rng(config.seed, 0)
    cells = grid.cells
    g_feats = features.control_features(cells)
    p_w = params.risk_weights()
    q_w = params.cost_weights()
    step = config.integrator.step
    basis = PreviewBasis(cells, config.preview, step)

    n = config.n_steps
    states = np.empty((n + 1, 4))
    controls = np.empty((n, 2))
    states[0] = s0.as_array()
    for i in range(n):
        z = _scores(states[i], p_w, q_w, cells, g_feats, config.preview,
                    course, features, step, basis=basis)
        probs = _normalize(z)
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        j = int(np.searchsorted(cdf, rng.random(), side="right"))
        controls[i] = cells[j]
        states[i + 1] = propagate(states[i], cells[j], config.dt, step)
    times = np.arange(n + 1) * config.dt
    return Trajectory(times, states, controls)


def sample_trajectories(
    s0: VehicleState,
    params: RiskParams,
    grid: ControlGrid,
    config: SamplerConfig,
    course: Course,
    indices,
    features=DEFAULT_FEATURES,
) -> list:
    """Sample one trajectory per stream index, advancing them in lockstep.

    Member k draws from trajectory_rng(config.seed, indices[k]) exactly
    as :func:`sample_trajectory` would, but all members' grid previews
    are batched per step, which is much faster for ensembles.
    """
    indices = [int(i) for i in indices]
    rngs = [trajectory_rng(config.seed, i) for i in indices]
    k = len(rngs)
    if k == 0:
        return []
    cells = grid.cells
    g_feats = features.control_features(cells)
    p_w = params.risk_weights()
    q_w = params.cost_weights()
    step = config.integrator.step
    basis = PreviewBasis(cells, config.preview, step)

    n = config.n_steps
    states = np.empty((k, n + 1, 4))
    controls = np.empty((k, n, 2))
    states[:, 0] = s0.as_array()
    current = states[:, 0].copy()
    for i in range(n):
        z = _scores(current, p_w, q_w, cells, g_feats, config.preview,
                    course, features, step, basis=basis)
        probs = _normalize(z)
        cdf = np.cumsum(probs, axis=1)
        cdf[:, -1] = 1.0
        chosen = np.empty(k, dtype=int)
        for m, rng in enumerate(rngs):
            chosen[m] = np.searchsorted(cdf[m], rng.random(), side="right")
        controls[:, i] = cells[chosen]
        current = propagate(current, cells[chosen], config.dt, step)
        states[:, i + 1] = current
    times = np.arange(n + 1) * config.dt
    return [Trajectory(times.copy(), states[m], controls[m]) for m in range(k)]
