"""Maximum-likelihood fitting of risk-field weights.

For observed (state, control) pairs the log-likelihood under the
softmax policy is, per observation, the negated weighted features of
the chosen control minus the log-sum-exp over the grid.  Both terms
are linear in the weights, so the objective is concave and a
projected-gradient ascent under the nonnegativity bounds reaches the
global maximum.

The previewed-state features for every grid cell are independent of
the weights, so they are computed once per (dataset, preview) and
cached; the optimizer then runs on pure linear algebra.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .course import Course
from .data import DriverLog, Segment, derive_controls
from .dynamics import IntegratorConfig, PreviewBasis, propagate_snapshots
from .errors import FormatError, ValidationError
from .policy import ControlGrid
from .riskmodel import DEFAULT_FEATURES, RiskParams

__all__ = [
    "Dataset",
    "FitConfig",
    "FittedModel",
    "FeatureCache",
    "build_cache",
    "build_caches",
    "log_likelihood",
    "log_likelihood_gradient",
    "fit",
    "select_preview",
]

_ARMIJO_C = 1e-4
_BACKTRACK = 0.5
_MAX_BACKTRACKS = 60


@dataclass
class Dataset:
    """Observed states with the grid cell chosen at each, for fitting."""

    states: np.ndarray
    cells: np.ndarray
    times: np.ndarray
    course: Course
    grid: ControlGrid

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 4)
        self.cells = np.asarray(self.cells, dtype=int).reshape(-1)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        m = len(self.states)
        if m == 0:
            raise ValidationError("dataset must be nonempty")
        if len(self.cells) != m or len(self.times) != m:
            raise ValidationError("states, cells and times must have equal length")
        if np.any(self.cells < 0) or np.any(self.cells >= self.grid.n_cells):
            raise ValidationError("cell index out of range")
        if np.any(np.diff(self.times) < 0):
            raise ValidationError("timestamps must be nondecreasing")

    @property
    def n_obs(self) -> int:
        return len(self.states)

    @classmethod
    def from_log(
        cls,
        log: DriverLog,
        course: Course,
        grid: ControlGrid,
        stride: int = 6,
    ) -> "Dataset":
        """Build observations from a log, every `stride`-th row.

        Controls are taken from the log when present, otherwise derived
        from state differences, then snapped to the nearest grid cell.
        The final row carries no own control and is dropped.
        """
        if stride < 1:
            raise ValidationError("stride must be >= 1")
        controls = log.controls if log.controls is not None else derive_controls(log)
        keep = np.arange(0, log.n_rows - 1, stride)
        if keep.size == 0:
            raise ValidationError("log too short for the requested stride")
        return cls(
            log.states[keep],
            grid.snap_index(controls[keep]),
            log.times[keep],
            course,
            grid,
        )

    @classmethod
    def from_segments(
        cls,
        segments: list[Segment],
        course: Course,
        grid: ControlGrid,
        stride: int = 1,
    ) -> "Dataset":
        """Concatenate segment rows (sorted by time) into one dataset."""
        if not segments:
            raise ValidationError("no segments given")
        states, cells, times = [], [], []
        for seg in segments:
            log = seg.log
            controls = (
                log.controls if log.controls is not None else derive_controls(log)
            )
            stop = min(seg.stop, log.n_rows - 1)  # final log row has no own control
            idx = np.arange(seg.start, stop, stride)
            if idx.size == 0:
                continue
            states.append(log.states[idx])
            cells.append(grid.snap_index(controls[idx]))
            times.append(log.times[idx])
        if not states:
            raise ValidationError("segments contain no usable rows")
        states = np.concatenate(states)
        cells = np.concatenate(cells)
        times = np.concatenate(times)
        order = np.argsort(times, kind="stable")
        return cls(states[order], cells[order], times[order], course, grid)


@dataclass
class FitConfig:
    """Optimizer settings and the preview-time search grid."""

    previews: tuple = (0.6, 0.8, 1.0, 1.2)
    tolerance: float = 1e-6
    max_iter: int = 500
    initial: np.ndarray | None = None

    def __post_init__(self):
        if not self.previews or any(p <= 0 for p in self.previews):
            raise ValidationError("previews must be positive")
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be positive")


@dataclass
class FittedModel:
    """Fitted weights with the preview time and convergence report."""

    params: RiskParams
    preview: float
    loglik: float
    n_obs: int
    converged: bool
    iterations: int
    grad_norm: float
    trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.loglik > 1e-9:
            raise ValidationError("log-likelihood must be <= 0")

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "preview": self.preview,
            "feature_set": DEFAULT_FEATURES.name,
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "grad_norm": self.grad_norm,
            },
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FittedModel":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as e:
                raise FormatError(str(path), f"line {e.lineno}", e.msg) from e
        try:
            conv = d.get("convergence", {})
            return cls(
                RiskParams.from_dict(d["params"]),
                float(d["preview"]),
                float(d["loglik"]),
                int(d["n_obs"]),
                bool(conv.get("converged", True)),
                int(conv.get("iterations", 0)),
                float(conv.get("grad_norm", 0.0)),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(str(path), "model", f"missing or bad field: {e}") from e


@dataclass
class FeatureCache:
    """Per-observation previewed features for every grid cell.

    f_all[i, j]: state features of observation i previewed under cell j;
    g_all[j]: control features of cell j; f_obs/g_obs gather the
    observed cells.
    """

    f_all: np.ndarray
    g_all: np.ndarray
    f_obs: np.ndarray
    g_obs: np.ndarray

    @property
    def n_obs(self) -> int:
        return len(self.f_all)

    @property
    def splits(self) -> tuple:
        return self.f_all.shape[2], self.g_all.shape[1]


def _preview_snapshots(states, cells, previews, step, bases):
    """Previewed states per (observation, cell) for each preview time.

    Uses the affine preview bases for states above the clamp floor and
    integrates the rest directly, row by row matching what the sampler
    previews.  Returns (len(previews), m, n, 4).
    """
    v = states[:, 2]
    floor = max(b.v_floor for b in bases)
    if np.all(v >= floor):
        return np.stack([b.states_after(states) for b in bases], axis=0)
    out = np.stack([b.states_after(states) for b in bases], axis=0)
    mask = v < floor
    direct = propagate_snapshots(states[mask][:, None, :], cells, previews, step)
    out[:, mask] = direct
    return out


def build_caches(
    data: Dataset,
    previews,
    features=DEFAULT_FEATURES,
    integrator: IntegratorConfig = IntegratorConfig(),
    chunk: int = 2048,
) -> dict:
    """Feature caches for several preview times in one integration pass.

    Observations are processed in chunks to bound the (chunk x cells)
    working set.  Returns {preview: FeatureCache}.
    """
    previews = sorted(float(p) for p in previews)
    cells = data.grid.cells
    g_all = features.control_features(cells)
    m, n = data.n_obs, data.grid.n_cells
    bases = PreviewBasis.multi(cells, previews, integrator.step)
    f_parts = {p: np.empty((m, n, features.n_state)) for p in previews}
    for i in range(0, m, chunk):
        j = min(i + chunk, m)
        snaps = _preview_snapshots(
            data.states[i:j], cells, previews, integrator.step, bases
        )
        for k, p in enumerate(previews):
            f_parts[p][i:j] = features.state_features(snaps[k], data.course)
    rows = np.arange(m)
    out = {}
    for p in previews:
        f_all = f_parts[p]
        out[p] = FeatureCache(f_all, g_all, f_all[rows, data.cells], g_all[data.cells])
    return out


def build_cache(
    data: Dataset,
    preview: float,
    features=DEFAULT_FEATURES,
    integrator: IntegratorConfig = IntegratorConfig(),
    chunk: int = 2048,
) -> FeatureCache:
    return build_caches(data, [preview], features, integrator, chunk)[float(preview)]


def _as_theta(params, cache: FeatureCache) -> np.ndarray:
    if isinstance(params, RiskParams):
        return params.to_vector()
    theta = np.asarray(params, dtype=float)
    if theta.shape != (cache.splits[0] + cache.splits[1],):
        raise ValidationError("weight vector length does not match the features")
    return theta


def _score_matrix(theta, cache: FeatureCache):
    nf = cache.splits[0]
    p, q = theta[:nf], theta[nf:]
    m, n, _ = cache.f_all.shape
    z = cache.f_all.reshape(m * n, nf) @ p
    z = z.reshape(m, n)
    z += cache.g_all @ q
    np.negative(z, out=z)
    z_obs = -(cache.f_obs @ p + cache.g_obs @ q)
    return z, z_obs


def _value(theta, cache: FeatureCache) -> float:
    z, z_obs = _score_matrix(theta, cache)
    zmax = z.max(axis=1)
    z -= zmax[:, None]
    np.exp(z, out=z)
    lse = zmax + np.log(z.sum(axis=1))
    return float((z_obs - lse).sum())


def _value_and_grad(theta, cache: FeatureCache):
    z, z_obs = _score_matrix(theta, cache)
    m, n, nf = cache.f_all.shape
    zmax = z.max(axis=1)
    z -= zmax[:, None]
    np.exp(z, out=z)
    denom = z.sum(axis=1)
    value = float((z_obs - (zmax + np.log(denom))).sum())
    w = z
    w /= denom[:, None]
    grad_p = w.reshape(m * n) @ cache.f_all.reshape(m * n, nf)
    grad_p -= cache.f_obs.sum(axis=0)
    grad_q = w.sum(axis=0) @ cache.g_all - cache.g_obs.sum(axis=0)
    return value, np.concatenate([grad_p, grad_q])


def log_likelihood(params, data: Dataset, preview: float, cache=None) -> float:
    """Sum of log choice probabilities of the observed controls.

    `params` may be a RiskParams or a raw weight vector.  Pass a
    prebuilt cache to skip the preview integration.
    """
    if cache is None:
        cache = build_cache(data, preview)
    return _value(_as_theta(params, cache), cache)


def log_likelihood_gradient(params, data: Dataset, preview: float, cache=None):
    """Gradient over (p, q): expected minus observed features per weight."""
    if cache is None:
        cache = build_cache(data, preview)
    return _value_and_grad(_as_theta(params, cache), cache)[1]


def _projected_gradient(theta, grad) -> np.ndarray:
    # At an active bound only the inward (positive) component counts.
    return np.where(theta > 0.0, grad, np.maximum(grad, 0.0))


def _feature_scales(cache: FeatureCache) -> np.ndarray:
    """Per-weight scale: mean across-cell spread of the feature.

    The spread of a feature over the grid is what one unit of its
    weight contributes to the score differences, so dividing by it
    equalizes the curvature across weights (a diagonal preconditioner;
    the bound constraints are invariant under it).  Features with no
    spread get scale 1.
    """
    f_spread = np.sqrt((cache.f_all.std(axis=1) ** 2).mean(axis=0))
    g_spread = cache.g_all.std(axis=0)
    scale = np.concatenate([f_spread, g_spread])
    return np.where(scale > 1e-12, scale, 1.0)


def fit(
    data: Dataset,
    preview: float,
    config: FitConfig | None = None,
    cache: FeatureCache | None = None,
) -> FittedModel:
    """Maximize the log-likelihood over nonnegative weights.

    Projected-gradient ascent with a Barzilai-Borwein initial step and
    Armijo backtracking; by concavity the returned point is the global
    maximizer up to the tolerance.  If the projected-gradient sup norm
    does not reach the tolerance within max_iter the best iterate is
    returned flagged non-converged.

    The trace records (iteration, loglik, step) per accepted step.
    """
    config = config or FitConfig()
    if cache is None:
        cache = build_cache(data, preview)
    n_weights = cache.splits[0] + cache.splits[1]
    if n_weights != 5:
        raise ValidationError("fit packages the default 5-weight feature set")
    if config.initial is None:
        theta = np.ones(n_weights)
    else:
        theta = np.asarray(config.initial, dtype=float).copy()
        if theta.shape != (n_weights,):
            raise ValidationError("initial weights have the wrong length")
        if np.any(theta < 0):
            raise ValidationError("initial weights must be nonnegative")

    # Ascend in the preconditioned coordinates phi = scale * theta; the
    # tolerance is still checked on the unscaled projected gradient.
    scale = _feature_scales(cache)

    def value_and_grad_phi(phi):
        value, grad = _value_and_grad(phi / scale, cache)
        return value, grad / scale

    phi = theta * scale
    value, grad_phi = value_and_grad_phi(phi)
    trace = [(0, value, 0.0)]
    prev_phi = prev_grad = None
    alpha = 1.0 / max(1.0, float(np.abs(grad_phi).max()))
    converged = False
    iterations = 0

    def unscaled_pg_norm(phi, grad_phi):
        return float(np.abs(_projected_gradient(phi, grad_phi * scale)).max())

    pg_norm = unscaled_pg_norm(phi, grad_phi)

    for it in range(1, config.max_iter + 1):
        if pg_norm < config.tolerance:
            converged = True
            break
        iterations = it
        if prev_phi is not None:
            s = phi - prev_phi
            y = prev_grad - grad_phi
            sy = float(s @ y)
            if sy > 1e-30:
                alpha = min(max(float(s @ s) / sy, 1e-12), 1e12)
        prev_phi, prev_grad = phi, grad_phi

        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            cand = np.maximum(phi + alpha * grad_phi, 0.0)
            d = cand - phi
            gd = float(grad_phi @ d)
            if gd <= 0.0:
                break  # no feasible ascent direction at this step size
            cand_value = _value(cand / scale, cache)
            if cand_value >= value + _ARMIJO_C * gd:
                accepted = True
                break
            alpha *= _BACKTRACK
        if not accepted:
            break
        phi = cand
        value, grad_phi = value_and_grad_phi(phi)
        trace.append((it, value, alpha))
        pg_norm = unscaled_pg_norm(phi, grad_phi)
    else:
        converged = pg_norm < config.tolerance

    return FittedModel(
        params=RiskParams.from_vector(phi / scale),
        preview=float(preview),
        loglik=value,
        n_obs=data.n_obs,
        converged=converged,
        iterations=iterations,
        grad_norm=pg_norm,
        trace=trace,
    )


def select_preview(data: Dataset, config: FitConfig | None = None) -> FittedModel:
    """Fit at every preview in the grid and keep the highest likelihood.

    Exact likelihood ties break toward the larger preview time.
    """
    config = config or FitConfig()
    caches = build_caches(data, config.previews)
    best = None
    for preview in sorted(float(p) for p in config.previews):
        model = fit(data, preview, config, cache=caches[preview])
        if (
            best is None
            or model.loglik > best.loglik
            or (model.loglik == best.loglik and model.preview > best.preview)
        ):
            best = model
    return best
