import numpy as np
import pytest

from embedding_atlas.lipschitz import (PreconditionError, direction_suite, hist_csv, ldlc_csv,
                                       ldlc_distribution, ldlc_estimate, ldlc_from_fn,
                                       offset_grid, summarize, write_hist_csv, write_ldlc_csv)
from embedding_atlas.pipeline import optimized_directions
from embedding_atlas.tensor import Rng

from conftest import random_unit


def test_grid_symmetric_and_nested():
    g21, g41 = offset_grid(1e-3, 21), offset_grid(1e-3, 41)
    assert np.array_equal(g21, -g21[::-1])
    assert g21[0] == -1e-3 and g21[-1] == 1e-3 and g21[10] == 0.0
    assert set(g21) <= set(g41)


def test_linear_map_is_exact():
    a = Rng(1).normal((4, 10))
    d = random_unit(Rng(2), 10)
    est = ldlc_from_fn(lambda x: a @ x, Rng(3).normal(10), d)
    assert abs(est.value - np.linalg.norm(a @ d)) < 1e-9 * est.value
    assert est.n_samples == 21


def test_linear_null_direction_gives_zero():
    a = Rng(4).normal((3, 6))
    a[:, 2] = 0.0
    d = np.zeros(6)
    d[2] = 1.0
    assert ldlc_from_fn(lambda x: a @ x, np.ones(6), d).value == 0.0


def test_preconditions():
    f = lambda x: x
    with pytest.raises(PreconditionError):
        ldlc_from_fn(f, np.ones(3), np.ones(3))
    d = np.array([1.0, 0.0, 0.0])
    with pytest.raises(PreconditionError):
        ldlc_from_fn(f, np.ones(3), d, grid_n=20)
    with pytest.raises(PreconditionError):
        ldlc_from_fn(f, np.ones(3), d, grid_n=1)
    with pytest.raises(PreconditionError):
        ldlc_from_fn(f, np.ones(3), d, epsilon=0.0)


def test_top_singular_vector(weights, config, x0, svd):
    est = ldlc_estimate(weights, config, x0, svd.v[:, 0])
    assert abs(est.value - svd.s[0]) < 0.05 * svd.s[0]


def test_sign_symmetry_and_refinement(weights, config, x0):
    d = random_unit(Rng(5), 3072)
    pos = ldlc_estimate(weights, config, x0, d)
    neg = ldlc_estimate(weights, config, x0, -d)
    assert pos.value == neg.value
    fine = ldlc_estimate(weights, config, x0, d, grid_n=41)
    assert fine.value - pos.value >= -1e-12


def test_direction_suite(svd, jac):
    dirs, skipped = direction_suite(svd, Rng(6), {"singular": 3, "random": 4, "null": 4})
    fams = [f for f, _ in dirs]
    assert fams == ["singular"] * 3 + ["random_gaussian"] * 4 + ["null_projected"] * 4
    assert skipped == 0
    for i in range(3):
        assert np.array_equal(dirs[i][1], svd.v[:, i])
    for _, d in dirs:
        assert abs(np.linalg.norm(d) - 1) < 1e-12
    for _, d in dirs[7:]:
        assert np.linalg.norm(jac @ d) <= 1e-8 * svd.sigma_max
    with pytest.raises(PreconditionError):
        direction_suite(svd, Rng(0), {"singular": 17})


@pytest.fixture(scope="module")
def small_run(weights, config, x0, svd):
    dirs, _ = direction_suite(svd, Rng(7), {"singular": 1, "random": 30, "null": 30})
    dirs += optimized_directions(weights, config, x0, 30)
    return ldlc_distribution(weights, config, x0, dirs)


def test_family_ordering(small_run):
    med = {f: d.summary["median"] for f, d in small_run.items()}
    assert med["null_projected"] <= 1e-2 * med["random_gaussian"]
    assert med["optimized"] > med["random_gaussian"] > med["null_projected"]


def test_values_bounded_by_sigma(small_run, svd):
    eps = 1e-3
    sing = small_run["singular"].estimates[0].value
    kappa = abs(sing - svd.s[0]) / eps  # curvature scale read off the top direction
    for dist in small_run.values():
        assert np.all(dist.values <= svd.sigma_max * (1 + 1e-3) + 2 * kappa * eps)


def test_summary_recomputable(small_run):
    for dist in small_run.values():
        assert summarize(dist.values) == dist.summary
        assert sum(dist.summary["counts"]) + dist.summary["zero_count"] == len(dist.estimates)


def test_single_direction_summary():
    s = summarize(np.array([0.3]))
    assert s["min"] == s["median"] == s["max"] == 0.3
    assert sum(s["counts"]) == 1


def test_threaded_distribution_matches(weights, config, x0, svd):
    dirs, _ = direction_suite(svd, Rng(8), {"random": 6})
    a = ldlc_distribution(weights, config, x0, dirs, workers=1)
    b = ldlc_distribution(weights, config, x0, dirs, workers=3)
    assert ldlc_csv(a) == ldlc_csv(b)


def test_csv_writers(tmp_path, small_run):
    write_ldlc_csv(small_run, tmp_path / "l.csv")
    write_hist_csv(small_run, tmp_path / "h.csv")
    rows = (tmp_path / "l.csv").read_text().splitlines()
    assert rows[0] == "family,direction_index,epsilon,value,argmax_alpha,argmax_beta"
    assert len(rows) == 1 + sum(len(d.estimates) for d in small_run.values())
    assert (tmp_path / "h.csv").read_text() == hist_csv(small_run)
