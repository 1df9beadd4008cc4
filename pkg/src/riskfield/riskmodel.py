"""Additive risk field and quadratic control cost.

Risk at a state is a nonnegative weighted sum of feature functions;
control cost is a weighted sum of control features.  The default
feature set ("eq3-eq4" in fitted-model files) is:

    state features   f1 = (distance to centerline)^2
                     f2 = exp(-(distance to next obstacle)^2 / d_o^2)
                     f3 = (v - v_tgt)^2
    control features g1 = u1^2
                     g2 = u2^2

Risk and cost are linear in the weights, which is what makes the
fitting objective concave.  Any feature set with the same interface
can be substituted; the weights vector is then (p..., q...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .course import Course
from .dynamics import Control, VehicleState
from .errors import ValidationError

__all__ = [
    "RiskParams",
    "QuadraticFeatures",
    "DEFAULT_FEATURES",
    "state_features",
    "risk",
    "cost",
]


@dataclass(frozen=True)
class RiskParams:
    """Nonnegative weights of the default risk field.

    A: centerline deviation, B: obstacle proximity, C: speed deviation,
    D: acceleration cost, E: turn-rate cost.  The generic split is
    p = (A, B, C) risk weights and q = (D, E) cost weights.
    """

    A: float
    B: float
    C: float
    D: float
    E: float

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "E"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0.0):
                raise ValidationError(f"RiskParams.{name} must be finite and >= 0")

    def risk_weights(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C], dtype=float)

    def cost_weights(self) -> np.ndarray:
        return np.array([self.D, self.E], dtype=float)

    def to_vector(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C, self.D, self.E], dtype=float)

    @classmethod
    def from_vector(cls, vec) -> "RiskParams":
        a, b, c, d, e = (float(w) for w in vec)
        return cls(a, b, c, d, e)

    @classmethod
    def zeros(cls) -> "RiskParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "C": self.C, "D": self.D, "E": self.E}

    @classmethod
    def from_dict(cls, d: dict) -> "RiskParams":
        return cls(*(float(d[k]) for k in ("A", "B", "C", "D", "E")))


class QuadraticFeatures:
    """Default feature set: squared offsets plus an obstacle proximity bump.

    `name` is the identifier written into fitted-model files.
    """

    name = "eq3-eq4"
    n_state = 3
    n_control = 2

    def state_features(self, states, course: Course) -> np.ndarray:
        """Risk features at batched states, shape (..., 3).

        With no obstacle ahead (or none on the course) the proximity
        feature is zero.
        """
        states = np.asarray(states, dtype=float)
        v = states[..., 2]
        d_center, d_obs = course.risk_distances(states[..., :2])
        # exp(-inf) underflows cleanly to 0 for the no-obstacle sentinel
        bump = np.exp(-(d_obs**2) / course.obstacle_diameter**2)
        return np.stack(
            [d_center**2, bump, (v - course.v_tgt) ** 2],
            axis=-1,
        )

    def control_features(self, controls) -> np.ndarray:
        """Cost features at batched controls, shape (..., 2)."""
        controls = np.asarray(controls, dtype=float)
        return controls**2


DEFAULT_FEATURES = QuadraticFeatures()


def state_features(state: VehicleState, course: Course) -> np.ndarray:
    """Feature vector (f1, f2, f3) at a single state."""
    return DEFAULT_FEATURES.state_features(state.as_array(), course)


def risk(state: VehicleState, params: RiskParams, course: Course) -> float:
    """A*f1 + B*f2 + C*f3 at the given state."""
    return float(state_features(state, course) @ params.risk_weights())


def cost(control: Control, params: RiskParams) -> float:
    """D*u1^2 + E*u2^2."""
    return float(
        DEFAULT_FEATURES.control_features(control.as_array()) @ params.cost_weights()
    )
