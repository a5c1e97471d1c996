"""Jacobian SVD at an input: singular spectrum, null/normal projectors, sigma_max."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .tensor import DimensionError, as_tensor, reduced_svd
from .vit import model_fn

RANK_RTOL = 1e-10
RECONSTRUCTION_TOL = 1e-10


class DegenerateDirectionError(ValueError):
    """The projected direction has (numerically) no component left."""


def jacobian_at(weights, config, x0, workers=None) -> np.ndarray:
    """Exact (n, m) Jacobian of the embedding at ``x0``."""
    x0 = as_tensor(x0)
    if x0.size != config.input_dim:
        raise DimensionError(f"input has {x0.size} values, config expects {config.input_dim}")
    return ad.jacobian(model_fn(weights, config), x0.reshape(config.input_dim), workers)


def effective_rank(s, rtol=RANK_RTOL) -> int:
    s = np.asarray(s)
    if s.size == 0 or s[0] == 0:
        return 0
    small = np.nonzero(s < rtol * s[0])[0]
    return int(small[0]) if small.size else int(s.size)


@dataclass(frozen=True)
class JacobianSvd:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    anchor_input: np.ndarray | None = None

    @property
    def sigma_max(self) -> float:
        return float(self.s[0])

    @property
    def effective_rank(self) -> int:
        return effective_rank(self.s)

    @property
    def input_dim(self) -> int:
        return self.v.shape[0]

    def report(self) -> dict:
        checksum = None
        if self.anchor_input is not None:
            checksum = hashlib.sha256(np.ascontiguousarray(self.anchor_input).tobytes()).hexdigest()
        return {
            "sigma": [float(v) for v in self.s],
            "effective_rank": self.effective_rank,
            "sigma_max": self.sigma_max,
            "anchor_checksum": checksum,
        }

    def write_report(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.report(), fh, indent=2)
            fh.write("\n")

    def spectrum_csv(self) -> str:
        return "index,sigma\n" + "".join(f"{i},{v:.17g}\n" for i, v in enumerate(self.s))

    def write_spectrum_csv(self, path) -> None:
        Path(path).write_text(self.spectrum_csv())


def svd_analysis(j, x0=None) -> JacobianSvd:
    """Reduced SVD of a Jacobian, with the reconstruction bound checked."""
    j = as_tensor(j)
    u, s, v = reduced_svd(j)
    norm = np.linalg.norm(j)
    if norm > 0:
        resid = np.linalg.norm(j - (u * s) @ v.T) / norm
        if resid >= RECONSTRUCTION_TOL:
            raise ArithmeticError(f"SVD reconstruction residual {resid:.3e} too large")
    anchor = None if x0 is None else as_tensor(x0).reshape(-1).copy()
    return JacobianSvd(u, s, v, anchor)


def analyze(weights, config, x0, workers=None) -> JacobianSvd:
    return svd_analysis(jacobian_at(weights, config, x0, workers), x0)


def _split(svd: JacobianSvd, v, rank_cut):
    v = as_tensor(v).reshape(-1)
    if v.size != svd.input_dim:
        raise DimensionError(f"direction has {v.size} entries, expected {svd.input_dim}")
    if rank_cut is None:
        rank_cut = svd.effective_rank
    if not 0 <= rank_cut <= svd.s.size:
        raise ValueError(f"rank_cut must lie in [0, {svd.s.size}]")
    vr = svd.v[:, :rank_cut]
    normal = vr @ (vr.T @ v)
    null = v - normal
    # second pass removes what rounding left in span(V_r)
    corr = vr @ (vr.T @ null)
    return null - corr, normal + corr


def _unit(w, what):
    norm = np.linalg.norm(w)
    if norm < 1e-12:
        raise DegenerateDirectionError(f"direction has no {what} component (norm {norm:.2e})")
    return w / norm


def project_null(svd: JacobianSvd, v, rank_cut=None) -> np.ndarray:
    """Unit direction along the part of ``v`` orthogonal to the top right singular vectors."""
    null, _ = _split(svd, v, rank_cut)
    return _unit(null, "null-space")


def project_normal(svd: JacobianSvd, v, rank_cut=None) -> np.ndarray:
    """Unit direction along the part of ``v`` inside span of the top right singular vectors."""
    _, normal = _split(svd, v, rank_cut)
    return _unit(normal, "normal-space")


def normal_energy_fraction(svd: JacobianSvd, v, rank_cut=None) -> float:
    """Share of ``||v||^2`` that lies in the normal space."""
    null, normal = _split(svd, v, rank_cut)
    total = null @ null + normal @ normal
    return float(normal @ normal / total) if total > 0 else 0.0
