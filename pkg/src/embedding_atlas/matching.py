"""Embedding matching: gradient descent on ``0.5 * ||f(x) - target||^2``."""

from __future__ import annotations

import logging
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .tensor import DimensionError, as_tensor
from .vit import model_fn

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    """The loss became non-finite; ``trace`` holds everything up to the last finite step."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise DimensionError(f"cosine of shapes {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class MatchConfig:
    learning_rate: float = 0.05
    max_iters: int = 5000
    loss_tol: float | None = None
    cos_tol: float | None = 0.99
    perturb_budget: float | None = None
    record_every: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.loss_tol is None and self.cos_tol is None:
            raise ValueError("at most one of loss_tol / cos_tol may be disabled")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")


@dataclass
class MatchTrace:
    iters: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    cosine: list = field(default_factory=list)
    mean_abs_delta: list = field(default_factory=list)
    max_abs_delta: list = field(default_factory=list)
    clamped: list = field(default_factory=list)  # whether the step *into* this record clamped
    converged: bool = False
    stop_reason: str = ""
    clamp_events: int = 0

    def append(self, it, loss, cos, delta, clamped):
        self.iters.append(it)
        self.loss.append(loss)
        self.cosine.append(cos)
        self.mean_abs_delta.append(float(np.mean(np.abs(delta))))
        self.max_abs_delta.append(float(np.max(np.abs(delta))))
        self.clamped.append(clamped)

    @property
    def final_iter(self) -> int:
        return self.iters[-1]

    def csv_text(self) -> str:
        lines = ["iter,loss,cosine,mean_abs_delta,max_abs_delta"]
        for row in zip(self.iters, self.loss, self.cosine,
                       self.mean_abs_delta, self.max_abs_delta):
            lines.append("{},{:.17g},{:.17g},{:.17g},{:.17g}".format(*row))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())


def match_loss(weights, config, x, target_emb) -> float:
    f = model_fn(weights, config)(as_tensor(x))
    target_emb = as_tensor(target_emb)
    if f.shape != target_emb.shape:
        raise DimensionError(f"target has shape {target_emb.shape}, embedding {f.shape}")
    r = f - target_emb
    return 0.5 * float(r @ r)


def _loss_and_grad(fn, x, target_emb):
    f, tape = ad.record(fn, x)
    r = f - target_emb
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite loss is checked by the caller
        loss = 0.5 * float(r @ r)
    return f, loss, tape, r


def match_gradient(weights, config, x, target_emb) -> np.ndarray:
    """``J(x)^T (f(x) - target)`` as one reverse pass."""
    target_emb = as_tensor(target_emb)
    if target_emb.shape != (config.embed_dim,):
        raise DimensionError(f"target has shape {target_emb.shape}, expected ({config.embed_dim},)")
    x = as_tensor(x)
    _, _, tape, r = _loss_and_grad(model_fn(weights, config), x, target_emb)
    return ad.vjp(tape, r)


def match_embedding(weights, config, x0, target_emb, mcfg: MatchConfig = MatchConfig()):
    """Perturb ``x0`` by clamped gradient descent until its embedding matches ``target_emb``.

    Returns ``(x_star, trace)``.
    """
    target_emb = as_tensor(target_emb)
    if target_emb.shape != (config.embed_dim,):
        raise DimensionError(f"target has shape {target_emb.shape}, expected ({config.embed_dim},)")
    return match_fn(model_fn(weights, config), x0, target_emb, mcfg)


def match_fn(fn, x0, target_emb, mcfg: MatchConfig = MatchConfig()):
    """:func:`match_embedding` for any map built from the autodiff primitives."""
    x0 = as_tensor(x0)
    target_emb = as_tensor(target_emb)
    trace = MatchTrace()
    x = x0.copy()
    clamped = False

    for it in range(mcfg.max_iters + 1):
        f, loss, tape, r = _loss_and_grad(fn, x, target_emb)
        if not np.isfinite(loss):
            trace.stop_reason = "diverged"
            raise DivergenceError(f"loss became non-finite at iteration {it}", trace)
        cos = cosine_similarity(f, target_emb) if np.any(f) else 0.0
        delta = x - x0

        reason = ""
        if mcfg.loss_tol is not None and loss <= mcfg.loss_tol:
            reason = "loss_tol"
        elif mcfg.cos_tol is not None and cos >= mcfg.cos_tol:
            reason = "cos_tol"
        elif mcfg.perturb_budget is not None and np.mean(np.abs(delta)) > mcfg.perturb_budget:
            reason = "perturb_budget"
        elif it == mcfg.max_iters:
            reason = "max_iters"

        if reason or it % mcfg.record_every == 0:
            trace.append(it, loss, cos, delta, clamped)
        if reason:
            trace.stop_reason = reason
            trace.converged = reason in ("loss_tol", "cos_tol")
            break

        step = x - mcfg.learning_rate * ad.vjp(tape, r)
        x = np.clip(step, 0.0, 1.0)
        clamped = bool(np.any(x != step))
        trace.clamp_events += clamped

    log.debug("match stopped at %d (%s), cos=%.6f", trace.final_iter, trace.stop_reason, trace.cosine[-1])
    return x, trace


def perturbation_report(x0, x_star, scale: float = 50.0) -> dict:
    """Pixel-change statistics plus a mid-grey centred, amplified difference image."""
    x0 = as_tensor(x0)
    x_star = as_tensor(x_star)
    if x0.shape != x_star.shape:
        raise DimensionError(f"shapes {x0.shape} and {x_star.shape} differ")
    diff = x_star - x0
    return {
        "mean_abs": float(np.mean(np.abs(diff))),
        "max_abs": float(np.max(np.abs(diff))),
        "linf": float(np.max(np.abs(diff))),
        "diff_image": np.clip(0.5 + scale * diff, 0.0, 1.0),
    }
