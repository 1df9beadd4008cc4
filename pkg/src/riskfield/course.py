"""Driving course geometry.

A course is an immutable centerline polyline (optionally closed into a
loop) with point obstacles, a lane width, and a target speed.  All
queries are read-only and vectorized over batches of planar points;
the segment tables are precomputed once at construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

__all__ = [
    "ArcCoordinate",
    "Course",
    "point_to_polyline",
]

# Chunk size bound for (points x segments) distance tables, in floats.
_CHUNK_BUDGET = 4_000_000


@dataclass(frozen=True)
class ArcCoordinate:
    """Arc length s along the centerline plus signed lateral offset.

    `lateral` is positive to the left of the direction of travel.
    """

    s: float
    lateral: float


def _segment_tables(points: np.ndarray, closed: bool):
    starts = points if closed else points[:-1]
    ends = np.roll(points, -1, axis=0) if closed else points[1:]
    vecs = ends - starts
    lengths = np.hypot(vecs[:, 0], vecs[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    return starts, vecs, lengths, cum


def _nearest_on_segments(pts, starts, vecs, len2):
    """Per-point nearest segment: (squared distance, seg index, param t)."""
    px = pts[:, 0:1]
    py = pts[:, 1:2]
    relx = px - starts[:, 0]
    rely = py - starts[:, 1]
    t = (relx * vecs[:, 0] + rely * vecs[:, 1]) / len2
    np.clip(t, 0.0, 1.0, out=t)
    dx = relx - t * vecs[:, 0]
    dy = rely - t * vecs[:, 1]
    d2 = dx * dx + dy * dy
    idx = np.argmin(d2, axis=1)  # first minimum -> smaller arc length on ties
    rows = np.arange(len(pts))
    return d2[rows, idx], idx, t[rows, idx]


def point_to_polyline(points, polyline) -> np.ndarray:
    """Minimum Euclidean distance from each point to an open polyline."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    line = np.asarray(polyline, dtype=float)
    if line.ndim != 2 or line.shape[0] < 2 or line.shape[1] != 2:
        raise ValidationError("polyline must be an (n>=2, 2) array")
    starts, vecs, lengths, _ = _segment_tables(line, closed=False)
    len2 = np.maximum(lengths**2, np.finfo(float).tiny)
    d2, _, _ = _nearest_on_segments(pts, starts, vecs, len2)
    out = np.sqrt(d2)
    return out if np.asarray(points).ndim > 1 else float(out[0])


class Course:
    """Centerline polyline, obstacles, lane width and target speed.

    The centerline is given as an ordered list of at least two planar
    points; `closed=True` adds the wrap segment from the last point
    back to the first.  Obstacles are planar points ordered by the
    caller; the "next obstacle" query orders them by their arc-length
    projection onto the centerline.
    """

    def __init__(
        self,
        centerline,
        obstacles=(),
        obstacle_diameter: float = 0.3,
        lane_width: float = 3.0,
        v_tgt: float = 20.0,
        closed: bool = False,
    ):
        pts = np.asarray(centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError("centerline must be an (n, 2) array of points")
        if pts.shape[0] < 2:
            raise ValidationError("centerline needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            bad = int(np.argwhere(~np.all(np.isfinite(pts), axis=1))[0, 0])
            raise ValidationError(f"centerline[{bad}] is not finite")
        seg = np.diff(pts, axis=0)
        dup = np.flatnonzero(np.all(seg == 0.0, axis=1))
        if dup.size:
            i = int(dup[0])
            raise ValidationError(
                f"centerline[{i + 1}] duplicates centerline[{i}]"
            )
        if closed and np.all(pts[-1] == pts[0]):
            raise ValidationError(
                "closed course repeats the first point; omit the final point"
            )
        obs = np.asarray(obstacles, dtype=float).reshape(-1, 2)
        if obs.size and not np.all(np.isfinite(obs)):
            bad = int(np.argwhere(~np.all(np.isfinite(obs), axis=1))[0, 0])
            raise ValidationError(f"obstacles[{bad}] is not finite")
        if not (math.isfinite(obstacle_diameter) and obstacle_diameter > 0):
            raise ValidationError("obstacle_diameter must be positive")
        if not (math.isfinite(lane_width) and lane_width > 0):
            raise ValidationError("lane_width must be positive")
        if not (math.isfinite(v_tgt) and v_tgt >= 0):
            raise ValidationError("v_tgt must be nonnegative")

        self._points = pts.copy()
        self._points.setflags(write=False)
        self._obstacles = obs.copy()
        self._obstacles.setflags(write=False)
        self.obstacle_diameter = float(obstacle_diameter)
        self.lane_width = float(lane_width)
        self.v_tgt = float(v_tgt)
        self.closed = bool(closed)

        starts, vecs, lengths, cum = _segment_tables(self._points, self.closed)
        self._seg_start = starts
        self._seg_vec = vecs
        self._seg_len = lengths
        self._seg_len2 = lengths**2
        self._seg_cum = cum
        self._length = float(cum[-1])
        # Unit left normals per segment, for the lateral sign.
        tan = vecs / lengths[:, None]
        self._seg_normal = np.column_stack([-tan[:, 1], tan[:, 0]])

        if len(self._obstacles):
            s_obs, _ = self._project_flat(self._obstacles)
            order = np.argsort(s_obs, kind="stable")
            self._obs_s_sorted = s_obs[order]
            self._obs_sorted = self._obstacles[order]
        else:
            self._obs_s_sorted = np.empty(0)
            self._obs_sorted = np.empty((0, 2))

    # ------------------------------------------------------------------
    # Basic properties
    # ------------------------------------------------------------------

    @property
    def centerline(self) -> np.ndarray:
        return self._points

    @property
    def obstacles(self) -> np.ndarray:
        return self._obstacles

    @property
    def n_obstacles(self) -> int:
        return len(self._obstacles)

    @property
    def length(self) -> float:
        """Total centerline arc length (including the wrap segment if closed)."""
        return self._length

    # ------------------------------------------------------------------
    # Geometry queries
    # ------------------------------------------------------------------

    def _nearest_flat(self, pts):
        n_seg = len(self._seg_start)
        chunk = max(1, _CHUNK_BUDGET // n_seg)
        d2 = np.empty(len(pts))
        idx = np.empty(len(pts), dtype=int)
        t = np.empty(len(pts))
        for i in range(0, len(pts), chunk):
            j = min(i + chunk, len(pts))
            d2[i:j], idx[i:j], t[i:j] = _nearest_on_segments(
                pts[i:j], self._seg_start, self._seg_vec, self._seg_len2
            )
        return d2, idx, t

    def _project_flat(self, pts):
        d2, idx, t = self._nearest_flat(pts)
        s = self._seg_cum[idx] + t * self._seg_len[idx]
        foot = self._seg_start[idx] + t[:, None] * self._seg_vec[idx]
        lateral = np.einsum("pd,pd->p", pts - foot, self._seg_normal[idx])
        return s, lateral

    def pt_line_distance(self, pos):
        """Euclidean distance from pos to the nearest centerline point.

        Accepts a single (x, y) pair or an (..., 2) batch.
        """
        pts = np.asarray(pos, dtype=float)
        scalar = pts.ndim == 1
        flat = pts.reshape(-1, 2)
        d2, _, _ = self._nearest_flat(flat)
        out = np.sqrt(d2).reshape(pts.shape[:-1])
        return float(out) if scalar else out

    def project(self, pos) -> ArcCoordinate:
        """Arc coordinate of the nearest centerline point (ties -> smaller s)."""
        pts = np.asarray(pos, dtype=float).reshape(-1, 2)
        s, lateral = self._project_flat(pts)
        return ArcCoordinate(float(s[0]), float(lateral[0]))

    def arc_position(self, pos):
        """Batched arc length of the nearest centerline point, shape (...,)."""
        pts = np.asarray(pos, dtype=float)
        flat = pts.reshape(-1, 2)
        s, _ = self._project_flat(flat)
        return s.reshape(pts.shape[:-1])

    def obstacle_distance(self, pos):
        """Euclidean distance to the next obstacle along the course.

        The next obstacle is the one with the smallest arc coordinate at
        or ahead of the query point's centerline projection, wrapping on
        closed courses.  On an open course with no obstacle ahead the
        result is +inf.  Accepts a single point or an (..., 2) batch.
        """
        if self.n_obstacles == 0:
            raise ValidationError("course has no obstacles")
        pts = np.asarray(pos, dtype=float)
        scalar = pts.ndim == 1
        flat = pts.reshape(-1, 2)
        s, _ = self._project_flat(flat)
        dist = self._next_obstacle_distance(flat, s)
        out = dist.reshape(pts.shape[:-1])
        return float(out) if scalar else out

    def obstacle_arcs(self) -> np.ndarray:
        """Arc coordinates of the obstacles, in the order they were given."""
        if self.n_obstacles == 0:
            return np.empty(0)
        s, _ = self._project_flat(self._obstacles)
        return s

    def _next_obstacle_distance(self, flat, s):
        idx = np.searchsorted(self._obs_s_sorted, s, side="left")
        past_end = idx == len(self._obs_s_sorted)
        if self.closed:
            idx = np.where(past_end, 0, idx)
        target = self._obs_sorted[np.minimum(idx, len(self._obs_s_sorted) - 1)]
        dist = np.hypot(flat[:, 0] - target[:, 0], flat[:, 1] - target[:, 1])
        if not self.closed:
            dist = np.where(past_end, np.inf, dist)
        return dist

    def risk_distances(self, pos):
        """Centerline and next-obstacle distance in one projection pass.

        Returns (d_centerline, d_obstacle) arrays of shape (...,); the
        obstacle distance is +inf with no obstacle ahead or none on the
        course.
        """
        pts = np.asarray(pos, dtype=float)
        flat = pts.reshape(-1, 2)
        d2, idx, t = self._nearest_flat(flat)
        if self.n_obstacles:
            s = self._seg_cum[idx] + t * self._seg_len[idx]
            d_obs = self._next_obstacle_distance(flat, s)
        else:
            d_obs = np.full(len(flat), np.inf)
        lead = pts.shape[:-1]
        return np.sqrt(d2).reshape(lead), d_obs.reshape(lead)

    def start_state_array(self, speed=None) -> np.ndarray:
        """(x, y, v, psi) at the centerline start, heading along it."""
        v = self.v_tgt if speed is None else float(speed)
        tan = self._seg_vec[0] / self._seg_len[0]
        return np.array(
            [self._points[0, 0], self._points[0, 1], v, math.atan2(tan[1], tan[0])]
        )

    # ------------------------------------------------------------------
    # JSON persistence
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "centerline": [[float(x), float(y)] for x, y in self._points],
            "obstacles": [[float(x), float(y)] for x, y in self._obstacles],
            "obstacle_diameter": self.obstacle_diameter,
            "lane_width": self.lane_width,
            "v_tgt": self.v_tgt,
            "closed": self.closed,
        }

    @classmethod
    def from_dict(cls, d: dict, source: str = "<course>") -> "Course":
        if not isinstance(d, dict):
            raise FormatError(source, "$", "expected a JSON object")
        if "centerline" not in d:
            raise FormatError(source, "$", "missing required key 'centerline'")
        known = {
            "centerline",
            "obstacles",
            "obstacle_diameter",
            "lane_width",
            "v_tgt",
            "closed",
        }
        for key in d:
            if key not in known:
                raise FormatError(source, key, "unknown key")
        try:
            return cls(
                d["centerline"],
                d.get("obstacles", ()),
                obstacle_diameter=d.get("obstacle_diameter", 0.3),
                lane_width=d.get("lane_width", 3.0),
                v_tgt=d.get("v_tgt", 20.0),
                closed=d.get("closed", False),
            )
        except ValidationError as e:
            raise FormatError(source, "course", str(e)) from e

    @classmethod
    def load(cls, path) -> "Course":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as e:
                raise FormatError(str(path), f"line {e.lineno}", e.msg) from e
        return cls.from_dict(d, source=str(path))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
