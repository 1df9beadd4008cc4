"""Dependency-free SVG rendering of courses, trajectories and speeds.

Output is deterministic (fixed float formatting, no timestamps) so
plot files can be diffed across runs.
"""

from __future__ import annotations

import numpy as np

from .course import Course

__all__ = ["scene_svg", "velocity_svg", "write_svg"]

_PALETTE = [
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
]


def _fmt(value: float) -> str:
    return f"{value:.3f}"


def _polyline(points, color, width, dashed=False, opacity=1.0) -> str:
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    op = f' stroke-opacity="{opacity:.2f}"' if opacity < 1.0 else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}"'
        f"{dash}{op} points=\"{pts}\" />"
    )


class _Frame:
    """Maps world coordinates into a fixed-size SVG canvas (y up)."""

    def __init__(self, xs, ys, width=800, height=600, margin=40):
        self.width = width
        self.height = height
        x_lo, x_hi = float(np.min(xs)), float(np.max(xs))
        y_lo, y_hi = float(np.min(ys)), float(np.max(ys))
        span_x = max(x_hi - x_lo, 1e-9)
        span_y = max(y_hi - y_lo, 1e-9)
        scale = min((width - 2 * margin) / span_x, (height - 2 * margin) / span_y)
        self.scale = scale
        self.x0 = x_lo - (width / scale - span_x) / 2
        self.y0 = y_lo - (height / scale - span_y) / 2

    def to_canvas(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x = (pts[:, 0] - self.x0) * self.scale
        y = self.height - (pts[:, 1] - self.y0) * self.scale
        return np.column_stack([x, y])


def _document(body: list, width: int, height: int) -> str:
    head = (
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head, '<rect width="100%" height="100%" fill="white" />']
                     + body + ["</svg>"]) + "\n"


def scene_svg(course: Course, trajectories=(), labels=()) -> str:
    """Overlay of the centerline (dashed), obstacles, and trajectories.

    `trajectories` is a sequence of (n, 2) position arrays.
    """
    xs = [course.centerline[:, 0]]
    ys = [course.centerline[:, 1]]
    for traj in trajectories:
        traj = np.asarray(traj)
        xs.append(traj[:, 0])
        ys.append(traj[:, 1])
    frame = _Frame(np.concatenate(xs), np.concatenate(ys))

    body = []
    line = course.centerline
    if course.closed:
        line = np.vstack([line, line[:1]])
    body.append(_polyline(frame.to_canvas(line), "#333333", 1.5, dashed=True))
    r = max(course.obstacle_diameter / 2.0, course.lane_width / 6.0) * frame.scale
    for ox, oy in course.obstacles:
        (cx, cy), = frame.to_canvas([[ox, oy]])
        body.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" '
            'fill="#d62728" fill-opacity="0.6" stroke="#d62728" />'
        )
    labels = list(labels) + [""] * (len(trajectories) - len(labels))
    for i, traj in enumerate(trajectories):
        color = _PALETTE[i % len(_PALETTE)]
        body.append(_polyline(frame.to_canvas(traj), color, 1.2, opacity=0.75))
        if labels[i]:
            (lx, ly), = frame.to_canvas([np.asarray(traj)[0]])
            body.append(
                f'<text x="{_fmt(lx + 4)}" y="{_fmt(ly - 4)}" '
                f'font-size="11" fill="{color}">{labels[i]}</text>'
            )
    return _document(body, frame.width, frame.height)


def velocity_svg(series, labels=()) -> str:
    """Speed-versus-time polylines; `series` holds (times, speeds) pairs."""
    width, height, margin = 800, 400, 45
    t_hi = max(float(np.max(t)) for t, _ in series)
    v_all = np.concatenate([np.asarray(v, dtype=float) for _, v in series])
    v_lo, v_hi = float(v_all.min()), float(v_all.max())
    if v_hi - v_lo < 1e-9:
        v_hi = v_lo + 1.0
    sx = (width - 2 * margin) / max(t_hi, 1e-9)
    sy = (height - 2 * margin) / (v_hi - v_lo)

    def to_canvas(t, v):
        x = margin + np.asarray(t) * sx
        y = height - margin - (np.asarray(v) - v_lo) * sy
        return np.column_stack([x, y])

    body = [
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="#333333" />',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="#333333" />',
        f'<text x="{width // 2}" y="{height - 8}" font-size="12" '
        'fill="#333333">time (s)</text>',
        f'<text x="8" y="{margin - 10}" font-size="12" '
        'fill="#333333">speed (m/s)</text>',
    ]
    labels = list(labels) + [""] * (len(series) - len(labels))
    for i, (t, v) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        body.append(_polyline(to_canvas(t, v), color, 1.2, opacity=0.8))
        if labels[i]:
            body.append(
                f'<text x="{width - margin - 120}" y="{margin + 14 * (i + 1)}" '
                f'font-size="11" fill="{color}">{labels[i]}</text>'
            )
    return _document(body, width, height)


def write_svg(svg: str, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
