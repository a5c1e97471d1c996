"""Embeddings along straight input paths, and null-space walks.

A null walk repeatedly steps along a random direction in the local null
space of the Jacobian, refreshing the SVD at every point. When the
embedding drifts too far from where the walk started, a short matching run
pulls it back.
"""

from __future__ import annotations

import logging
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .matching import MatchConfig, cosine_similarity, match_fn
from .spectral import DegenerateDirectionError, project_null, svd_analysis
from .tensor import DimensionError, Rng, as_tensor
from .vit import model_fn

log = logging.getLogger(__name__)

CORRECTION = MatchConfig(learning_rate=0.01, max_iters=200, loss_tol=0.0, cos_tol=None)
MAX_RESAMPLES = 10


class StepFailureError(RuntimeError):
    pass


@dataclass
class PathTrace:
    t: np.ndarray
    cos_to_a: np.ndarray
    cos_to_b: np.ndarray
    dist_a: np.ndarray
    dist_b: np.ndarray
    mean_abs_delta: np.ndarray  # against x(0)
    mean_abs_delta_b: np.ndarray  # against x(1)

    def reversed_swapped(self) -> "PathTrace":
        """The trace as seen walking from B to A."""
        return PathTrace(self.t[::-1].copy(), self.cos_to_b[::-1], self.cos_to_a[::-1],
                         self.dist_b[::-1], self.dist_a[::-1],
                         self.mean_abs_delta_b[::-1], self.mean_abs_delta[::-1])

    def csv_text(self) -> str:
        lines = ["t,cos_to_a,cos_to_b,dist_a,dist_b,mean_abs_delta"]
        for row in zip(self.t, self.cos_to_a, self.cos_to_b, self.dist_a,
                       self.dist_b, self.mean_abs_delta):
            lines.append(",".join(format(v, ".17g") for v in row))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())


def interpolate_fn(fn, xa, xb, steps: int, frames=None) -> PathTrace:
    xa, xb = as_tensor(xa), as_tensor(xb)
    if xa.shape != xb.shape:
        raise DimensionError(f"endpoints have shapes {xa.shape} and {xb.shape}")
    if steps < 2:
        raise ValueError("steps must be at least 2")
    fa, fb = fn(xa), fn(xb)
    rows = []
    for i in range(steps + 1):
        # both weights as exact integer ratios, so A->B and B->A visit identical points
        wb, wa = i / steps, (steps - i) / steps
        x = wa * xa + wb * xb
        if frames is not None:
            frames.append(x)
        f = fn(x)
        rows.append((wb, cosine_similarity(f, fa), cosine_similarity(f, fb),
                     float(np.linalg.norm(f - fa)), float(np.linalg.norm(f - fb)),
                     float(np.mean(np.abs(x - xa))), float(np.mean(np.abs(x - xb)))))
    cols = [np.array(c) for c in zip(*rows)]
    return PathTrace(*cols)


def interpolate_trace(weights, config, xa, xb, steps: int, frames=None) -> PathTrace:
    """Embed ``(1 - t) xa + t xb`` for ``t = 0, 1/steps, ..., 1``."""
    return interpolate_fn(model_fn(weights, config), xa, xb, steps, frames)


def linear_fit_r2(t, y) -> float:
    """Coefficient of determination of the least-squares line through ``(t, y)``."""
    t, y = np.asarray(t), np.asarray(y)
    design = np.stack([t, np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    total = np.sum((y - y.mean()) ** 2)
    return 1.0 if total == 0 else float(1.0 - resid @ resid / total)


@dataclass
class WalkTrace:
    inputs: list = field(default_factory=list)
    input_disp: list = field(default_factory=list)
    embed_drift: list = field(default_factory=list)
    reprojections: list = field(default_factory=list)  # cumulative
    clamped: list = field(default_factory=list)
    step_drift: list = field(default_factory=list)  # drift added by the raw step, before correction

    def csv_text(self) -> str:
        lines = ["k,input_disp,embed_drift,reprojections"]
        for k, (d, e, r) in enumerate(zip(self.input_disp, self.embed_drift, self.reprojections)):
            lines.append(f"{k},{d:.17g},{e:.17g},{r}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())


def null_walk_fn(fn, x0, step_len, n_steps, rng: Rng, drift_cap, rank_cut=None,
                 straight=True, correction: MatchConfig = CORRECTION) -> WalkTrace:
    """Null walk for any map built from the autodiff primitives.

    With ``straight`` the sign of each direction is chosen to point away
    from ``x0``, so the input displacement never shrinks (clamping aside).
    """
    if not step_len > 0:
        raise ValueError("step_len must be positive")
    if not drift_cap > 0:
        raise ValueError("drift_cap must be positive")
    x0 = as_tensor(x0).reshape(-1)
    f0 = np.asarray(fn(x0))
    trace = WalkTrace()
    x = x0.copy()
    trace.inputs.append(x)
    trace.input_disp.append(0.0)
    trace.embed_drift.append(0.0)
    trace.reprojections.append(0)
    trace.clamped.append(False)
    trace.step_drift.append(0.0)
    reprojections = 0

    for k in range(n_steps):
        svd = svd_analysis(ad.jacobian(fn, x))
        for _ in range(MAX_RESAMPLES):
            try:
                d = project_null(svd, rng.normal(x.size), rank_cut)
                break
            except DegenerateDirectionError:
                continue
        else:
            raise StepFailureError(f"no usable null-space direction at step {k}")
        if straight and d @ (x - x0) < 0:
            d = -d
        f_before = np.asarray(fn(x))
        step = x + step_len * d
        x = np.clip(step, 0.0, 1.0)
        clamped = bool(np.any(x != step))
        f = np.asarray(fn(x))
        trace.step_drift.append(float(np.linalg.norm(f - f_before)))
        drift = float(np.linalg.norm(f - f0))
        if drift > drift_cap:
            tol = 0.5 * (0.5 * drift_cap) ** 2
            x, _ = match_fn(fn, x, f0, MatchConfig(
                learning_rate=correction.learning_rate, max_iters=correction.max_iters,
                loss_tol=tol, cos_tol=None))
            reprojections += 1
            drift = float(np.linalg.norm(np.asarray(fn(x)) - f0))
        trace.inputs.append(x)
        trace.input_disp.append(float(np.linalg.norm(x - x0)))
        trace.embed_drift.append(drift)
        trace.reprojections.append(reprojections)
        trace.clamped.append(clamped)
    return trace


def null_walk(weights, config, x0, step_len=0.5, n_steps=50, rank_cut=None,
              rng: Rng | None = None, drift_cap=0.05, straight=True) -> WalkTrace:
    """Walk from ``x0`` through successive local null spaces of the embedding."""
    rng = Rng(0) if rng is None else rng
    return null_walk_fn(model_fn(weights, config), x0, step_len, n_steps, rng,
                        drift_cap, rank_cut, straight)
