"""Local directional Lipschitz estimates along single input directions.

For a unit direction ``d`` the estimate is the largest slope
``||f(x0 + b d) - f(x0 + a d)|| / |b - a|`` over a symmetric grid of offsets
in ``[-eps, eps]``. Only the ``grid_n`` forward passes are computed; all
pairs are then compared from the cache.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import default_workers
from .spectral import DegenerateDirectionError, JacobianSvd, project_null
from .tensor import Rng, as_tensor
from .vit import model_fn

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-3
DEFAULT_GRID = 21
FAMILIES = ("singular", "random_gaussian", "null_projected", "optimized")


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class LdlcEstimate:
    direction: np.ndarray
    epsilon: float
    value: float
    argmax_alpha: float
    argmax_beta: float
    n_samples: int


def offset_grid(epsilon, grid_n) -> np.ndarray:
    """``grid_n`` uniform offsets in [-eps, eps], exactly symmetric and nested under refinement."""
    half = (grid_n - 1) // 2
    k = np.arange(-half, half + 1)
    return epsilon * (k / half)


def ldlc_from_fn(fn, x0, direction, epsilon=DEFAULT_EPS, grid_n=DEFAULT_GRID) -> LdlcEstimate:
    """Directional Lipschitz estimate for an arbitrary map ``fn``."""
    direction = as_tensor(direction).reshape(-1)
    x0 = as_tensor(x0).reshape(-1)
    norm = np.linalg.norm(direction)
    if abs(norm - 1.0) > 1e-10:
        raise PreconditionError(f"direction must be unit length, got norm {norm:.12f}")
    if not epsilon > 0:
        raise PreconditionError("epsilon must be positive")
    if grid_n < 3 or grid_n % 2 == 0:
        raise PreconditionError("grid_n must be odd and at least 3")

    grid = offset_grid(epsilon, grid_n)
    outs = np.stack([np.asarray(fn(x0 + a * direction)).reshape(-1) for a in grid])
    # all distinct grid pairs are at least one spacing apart
    i, j = np.triu_indices(grid_n, k=1)
    dist = np.linalg.norm(outs[j] - outs[i], axis=1)
    ratio = dist / (grid[j] - grid[i])
    best = int(np.argmax(ratio))
    return LdlcEstimate(direction, float(epsilon), float(ratio[best]),
                        float(grid[i[best]]), float(grid[j[best]]), grid_n)


def ldlc_estimate(weights, config, x0, direction, epsilon=DEFAULT_EPS, grid_n=DEFAULT_GRID):
    return ldlc_from_fn(model_fn(weights, config), x0, direction, epsilon, grid_n)


def direction_suite(svd: JacobianSvd, rng: Rng, counts: dict, rank_cut=None):
    """Unit directions tagged by family: top right singular vectors, Gaussian, null-projected Gaussian.

    Returns ``(directions, skipped)`` where ``directions`` is a list of
    ``(family, vector)`` and ``skipped`` counts degenerate null projections.
    """
    n_sing = counts.get("singular", 0)
    if n_sing > svd.s.size:
        raise PreconditionError(f"only {svd.s.size} singular directions exist")
    m = svd.input_dim
    out = [("singular", svd.v[:, i].copy()) for i in range(n_sing)]
    for _ in range(counts.get("random", 0)):
        g = rng.normal(m)
        out.append(("random_gaussian", g / np.linalg.norm(g)))
    skipped = 0
    for _ in range(counts.get("null", 0)):
        try:
            out.append(("null_projected", project_null(svd, rng.normal(m), rank_cut)))
        except DegenerateDirectionError:
            skipped += 1
    if skipped:
        log.warning("skipped %d degenerate null-space directions", skipped)
    return out, skipped


@dataclass
class LdlcDistribution:
    family: str
    estimates: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @classmethod
    def from_estimates(cls, family, estimates, bins_per_decade=4):
        values = np.array([e.value for e in estimates])
        return cls(family, list(estimates), summarize(values, bins_per_decade))

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])


def summarize(values, bins_per_decade=4) -> dict:
    values = np.asarray(values, dtype=np.float64)
    positive = values[values > 0]
    if positive.size:
        lo = np.floor(np.log10(positive.min()) * bins_per_decade) / bins_per_decade
        hi = np.ceil(np.log10(positive.max()) * bins_per_decade) / bins_per_decade
        if hi <= lo:
            hi = lo + 1.0 / bins_per_decade
        nbins = int(round((hi - lo) * bins_per_decade))
        edges = 10.0 ** np.linspace(lo, hi, nbins + 1)
        counts, _ = np.histogram(positive, bins=edges)
    else:
        edges, counts = np.array([]), np.array([], dtype=int)
    return {
        "min": float(values.min()),
        "median": float(np.median(values)),
        "max": float(values.max()),
        "mean": float(values.mean()),
        "zero_count": int(values.size - positive.size),
        "bin_edges": [float(e) for e in edges],
        "counts": [int(c) for c in counts],
    }


def ldlc_distribution(weights, config, x0, directions, epsilon=DEFAULT_EPS,
                      grid_n=DEFAULT_GRID, workers=None) -> dict:
    """Estimate every ``(family, direction)`` and group the results by family.

    Families keep the order in which they first appear in ``directions``.
    """
    fn = model_fn(weights, config)

    def one(item):
        return ldlc_from_fn(fn, x0, item[1], epsilon, grid_n)

    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            estimates = list(pool.map(one, directions))
    else:
        estimates = [one(item) for item in directions]

    grouped: dict = {}
    for (family, _), est in zip(directions, estimates):
        grouped.setdefault(family, []).append(est)
    return {fam: LdlcDistribution.from_estimates(fam, ests) for fam, ests in grouped.items()}


def ldlc_csv(distributions: dict) -> str:
    lines = ["family,direction_index,epsilon,value,argmax_alpha,argmax_beta"]
    for fam, dist in distributions.items():
        for i, e in enumerate(dist.estimates):
            lines.append(f"{fam},{i},{e.epsilon:.17g},{e.value:.17g},"
                         f"{e.argmax_alpha:.17g},{e.argmax_beta:.17g}")
    return "\n".join(lines) + "\n"


def hist_csv(distributions: dict) -> str:
    lines = ["family,bin_lo,bin_hi,count"]
    for fam, dist in distributions.items():
        edges = dist.summary["bin_edges"]
        for lo, hi, c in zip(edges[:-1], edges[1:], dist.summary["counts"]):
            lines.append(f"{fam},{lo:.17g},{hi:.17g},{c}")
    return "\n".join(lines) + "\n"


def write_ldlc_csv(distributions: dict, path) -> None:
    Path(path).write_text(ldlc_csv(distributions))


def write_hist_csv(distributions: dict, path) -> None:
    Path(path).write_text(hist_csv(distributions))
