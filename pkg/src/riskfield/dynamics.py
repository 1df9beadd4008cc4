"""Unicycle kinematics and fixed-step RK4 propagation.

The vehicle state is (x, y, v, psi): planar position in meters, speed
in m/s, heading in radians.  Heading is kept unwrapped.  A control is
an (acceleration, turning rate) pair held constant over the whole
integration interval.

All propagation routines accept batched state/control arrays with a
trailing axis of size 4 (states) or 2 (controls); leading axes
broadcast against each other.  They are pure functions and safe to
call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "VehicleState",
    "Control",
    "IntegratorConfig",
    "PreviewBasis",
    "derivative",
    "next_state",
    "propagate",
    "propagate_snapshots",
]


@dataclass(frozen=True)
class VehicleState:
    """Kinematic state: position (m), speed (m/s), heading (rad, unwrapped)."""

    x: float
    y: float
    v: float
    psi: float

    def __post_init__(self):
        for name in ("x", "y", "v", "psi"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"VehicleState.{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.psi], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        x, y, v, psi = (float(c) for c in arr)
        return cls(x, y, v, psi)


@dataclass(frozen=True)
class Control:
    """Acceleration u1 (m/s^2) and turning rate u2 (rad/s)."""

    u1: float
    u2: float

    def __post_init__(self):
        if not (math.isfinite(self.u1) and math.isfinite(self.u2)):
            raise ValidationError("Control inputs must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u1, self.u2], dtype=float)


@dataclass(frozen=True)
class IntegratorConfig:
    """Internal integration step for :func:`next_state` (seconds)."""

    step: float = 0.01

    def __post_init__(self):
        if not (math.isfinite(self.step) and self.step > 0.0):
            raise ValidationError("integrator step must be positive and finite")


def derivative(state: VehicleState, control: Control) -> tuple:
    """Instantaneous state rates (dx, dy, dv, dpsi) of the unicycle model.

    Returns (v cos psi, v sin psi, u1, u2).
    """
    return (
        state.v * math.cos(state.psi),
        state.v * math.sin(state.psi),
        control.u1,
        control.u2,
    )


def _rk4_substep(x, y, v, psi, u1, u2, h):
    # Classical 4th-order step.  The v and psi rates depend only on the
    # control, so the two midpoint stages coincide and the stage sum
    # reduces to k1 + 4*k2 + k4.
    k1x = v * np.cos(psi)
    k1y = v * np.sin(psi)
    vm = v + 0.5 * h * u1
    pm = psi + 0.5 * h * u2
    k2x = vm * np.cos(pm)
    k2y = vm * np.sin(pm)
    ve = v + h * u1
    pe = psi + h * u2
    k4x = ve * np.cos(pe)
    k4y = ve * np.sin(pe)
    sixth = h / 6.0
    return (
        x + sixth * (k1x + 4.0 * k2x + k4x),
        y + sixth * (k1y + 4.0 * k2y + k4y),
        ve,
        pe,
    )


def _rk4_run(x, y, v, psi, u1, u2, h, n):
    """n equal unclamped substeps; stage headings advance by rotation.

    The half-substep rotation (cos, sin of h*u2/2) is fixed across the
    run, so the trig of the stage headings is composed incrementally
    instead of re-evaluated per substep.
    """
    c = np.cos(psi)
    s = np.sin(psi)
    rc = np.cos(0.5 * h * u2)
    rs = np.sin(0.5 * h * u2)
    half_dv = 0.5 * h * u1
    sixth = h / 6.0
    for _ in range(n):
        vm = v + half_dv
        ve = vm + half_dv
        cm = c * rc - s * rs
        sm = s * rc + c * rs
        ce = cm * rc - sm * rs
        se = sm * rc + cm * rs
        x = x + sixth * (v * c + 4.0 * vm * cm + ve * ce)
        y = y + sixth * (v * s + 4.0 * vm * sm + ve * se)
        v = ve
        c = ce
        s = se
    return x, y, v, psi + (n * h) * u2


def _validate_batch(states, controls, duration, step):
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if states.shape[-1:] != (4,):
        raise ValidationError("states must have a trailing axis of size 4")
    if controls.shape[-1:] != (2,):
        raise ValidationError("controls must have a trailing axis of size 2")
    if not np.all(np.isfinite(states)):
        raise ValidationError("states must be finite")
    if not np.all(np.isfinite(controls)):
        raise ValidationError("controls must be finite")
    if not (math.isfinite(duration) and duration >= 0.0):
        raise ValidationError("duration must be finite and nonnegative")
    if not (math.isfinite(step) and step > 0.0):
        raise ValidationError("integrator step must be positive and finite")
    return states, controls


def _substep_lengths(duration: float, step: float):
    n_full = int(duration // step)
    rem = duration - n_full * step
    if rem > 1e-12:
        return n_full, rem
    return n_full, 0.0


def propagate(states, controls, duration: float, step: float = 0.01) -> np.ndarray:
    """Advance batched states by `duration` seconds under constant controls.

    Fixed-step classical RK4 with a final fractional step so the total
    integrated time equals `duration` exactly.  Speed is floored at
    zero: a vehicle decelerating through zero stops (position freezes)
    while the heading keeps integrating at rate u2.

    Args:
        states: (..., 4) array of (x, y, v, psi).
        controls: (..., 2) array of (u1, u2); leading axes broadcast
            against `states`.
        duration: integration time, seconds, >= 0.
        step: internal substep, seconds.

    Returns:
        (..., 4) array of propagated states (broadcast shape).
    """
    states, controls = _validate_batch(states, controls, duration, step)
    lead = np.broadcast_shapes(states.shape[:-1], controls.shape[:-1])
    x = np.array(np.broadcast_to(states[..., 0], lead), dtype=float)
    y = np.array(np.broadcast_to(states[..., 1], lead), dtype=float)
    v = np.array(np.broadcast_to(states[..., 2], lead), dtype=float)
    psi = np.array(np.broadcast_to(states[..., 3], lead), dtype=float)
    u1 = np.broadcast_to(controls[..., 0], lead)
    u2 = np.broadcast_to(controls[..., 1], lead)

    v = np.maximum(v, 0.0)
    if duration == 0.0:
        return np.stack([x, y, v, psi], axis=-1)

    n_full, rem = _substep_lengths(duration, step)
    # Decelerating cells need per-element step shortening at the v=0 crossing.
    clamped = bool(np.any(v + u1 * duration < 0.0))

    if not clamped:
        x, y, v, psi = _rk4_run(x, y, v, psi, u1, u2, step, n_full)
        if rem > 0.0:
            x, y, v, psi = _rk4_substep(x, y, v, psi, u1, u2, rem)
        return np.stack([x, y, v, psi], axis=-1)

    def advance(h):
        nonlocal x, y, v, psi
        with np.errstate(divide="ignore", invalid="ignore"):
            t_stop = -v / u1
        h_eff = np.where((u1 < 0.0) & (t_stop < h), t_stop, h)
        x, y, v, psi = _rk4_substep(x, y, v, psi, u1, u2, h_eff)
        psi = psi + u2 * (h - h_eff)
        v = np.maximum(v, 0.0)

    for _ in range(n_full):
        advance(step)
    if rem > 0.0:
        advance(rem)
    return np.stack([x, y, v, psi], axis=-1)


def propagate_snapshots(states, controls, durations, step: float = 0.01) -> np.ndarray:
    """States at several horizons under one constant control per cell.

    Integrates once, snapshotting at each requested time.  `durations`
    must be nondecreasing and nonnegative.

    Returns:
        (len(durations), ..., 4) array; entry k is the state at
        durations[k].
    """
    durations = [float(d) for d in durations]
    if not durations:
        raise ValidationError("durations must be nonempty")
    if any(d < 0 for d in durations) or any(
        b < a for a, b in zip(durations, durations[1:])
    ):
        raise ValidationError("durations must be nondecreasing and nonnegative")
    out = []
    cur = np.asarray(states, dtype=float)
    t = 0.0
    for d in durations:
        cur = propagate(cur, controls, d - t, step)
        out.append(cur)
        t = d
    return np.stack(out, axis=0)


def next_state(
    state: VehicleState,
    control: Control,
    duration: float,
    config: IntegratorConfig = IntegratorConfig(),
) -> VehicleState:
    """Single-state wrapper around :func:`propagate`."""
    arr = propagate(state.as_array(), control.as_array(), duration, config.step)
    return VehicleState.from_array(arr)


class PreviewBasis:
    """Affine shortcut for previewing one control set from many states.

    For speeds that never clamp, the RK4 stage headings are independent
    of the initial speed, so the vehicle-frame displacement under a
    given control is affine in it.  The table is built by integrating
    the control set at two clamp-free speeds; `states_after` then
    reproduces :func:`propagate` for every (state, control) pair by an
    affine combination plus a frame rotation.

    Only valid for states with v >= `v_floor` (below it a braking cell
    could stop the vehicle; callers must fall back to direct
    integration).
    """

    def __init__(self, controls, duration: float, step: float = 0.01):
        controls = np.asarray(controls, dtype=float)
        self.duration = float(duration)
        self.v_floor = self.duration * max(0.0, float(-controls[:, 0].min()))
        v1, v2 = self.v_floor, self.v_floor + 10.0
        base = np.zeros((2, len(controls), 4))
        base[0, :, 2] = v1
        base[1, :, 2] = v2
        out = propagate(base, controls, self.duration, step)
        self._ax = (out[1, :, 0] - out[0, :, 0]) / (v2 - v1)
        self._ay = (out[1, :, 1] - out[0, :, 1]) / (v2 - v1)
        self._bx = out[0, :, 0] - v1 * self._ax
        self._by = out[0, :, 1] - v1 * self._ay
        self._dv = controls[:, 0] * self.duration
        self._dpsi = controls[:, 1] * self.duration

    @classmethod
    def multi(cls, controls, durations, step: float = 0.01) -> list:
        """One basis per duration, sharing a single integration pass."""
        controls = np.asarray(controls, dtype=float)
        v_floor = max(d * max(0.0, float(-controls[:, 0].min())) for d in durations)
        v1, v2 = v_floor, v_floor + 10.0
        base = np.zeros((2, len(controls), 4))
        base[0, :, 2] = v1
        base[1, :, 2] = v2
        snaps = propagate_snapshots(base, controls, durations, step)
        out = []
        for k, d in enumerate(durations):
            basis = cls.__new__(cls)
            basis.duration = float(d)
            basis.v_floor = v_floor
            basis._ax = (snaps[k, 1, :, 0] - snaps[k, 0, :, 0]) / (v2 - v1)
            basis._ay = (snaps[k, 1, :, 1] - snaps[k, 0, :, 1]) / (v2 - v1)
            basis._bx = snaps[k, 0, :, 0] - v1 * basis._ax
            basis._by = snaps[k, 0, :, 1] - v1 * basis._ay
            basis._dv = controls[:, 0] * basis.duration
            basis._dpsi = controls[:, 1] * basis.duration
            out.append(basis)
        return out

    def covers(self, speeds) -> bool:
        return bool(np.min(speeds) >= self.v_floor)

    def states_after(self, states) -> np.ndarray:
        """Previewed states, shape (..., n_controls, 4)."""
        states = np.asarray(states, dtype=float)
        v0 = states[..., 2, None]
        psi0 = states[..., 3, None]
        c = np.cos(psi0)
        s = np.sin(psi0)
        dx = v0 * self._ax + self._bx
        dy = v0 * self._ay + self._by
        return np.stack(
            [
                states[..., 0, None] + c * dx - s * dy,
                states[..., 1, None] + s * dx + c * dy,
                v0 + self._dv,
                psi0 + self._dpsi,
            ],
            axis=-1,
        )
