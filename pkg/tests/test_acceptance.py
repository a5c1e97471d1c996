"""Acceptance suite on the reference configuration.

Each test prints one ``[PASS]`` / ``[FAIL]`` line for its criterion; the
lines are repeated in the pytest terminal summary. Run standalone with
``python3 tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest

from embedding_atlas import autodiff as ad
from embedding_atlas.classify import TEMPERATURE
from embedding_atlas.lipschitz import direction_suite, ldlc_distribution, ldlc_estimate
from embedding_atlas.matching import MatchConfig, cosine_similarity, match_embedding, match_gradient
from embedding_atlas.paths import interpolate_trace, linear_fit_r2, null_walk
from embedding_atlas.pipeline import (EXPERIMENTS, PipelineConfig, classify_experiment,
                                      optimized_directions, run_pipeline, validate)
from embedding_atlas.spectral import analyze, jacobian_at, svd_analysis
from embedding_atlas.synthetic import CLASSES, make_image
from embedding_atlas.tensor import Rng
from embedding_atlas.vit import embed, model_fn

RESULTS = []
JACOBIANS = []  # every Jacobian produced here, checked by criterion 2


def verdict(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def setup(weights, config, x0, target_img):
    target = embed(target_img, weights, config)
    return weights, config, x0, target


@pytest.fixture(scope="module")
def matched(setup):
    weights, config, x0, target = setup
    return match_embedding(weights, config, x0, target, MatchConfig(learning_rate=0.05))


def test_01_jacobian_matches_finite_differences(weights, config):
    fn = model_fn(weights, config)
    start = time.perf_counter()
    worst = 0.0
    for kind, seed in (("stripes", 11), ("checkers", 12), ("disks", 13)):
        x = make_image(kind, seed).reshape(-1)
        j = jacobian_at(weights, config, x)
        JACOBIANS.append(j)
        j_fd = ad.finite_diff_jacobian(fn, x, h=1e-5)
        worst = max(worst, np.max(np.abs(j - j_fd)) / np.max(np.abs(j_fd)))
    elapsed = time.perf_counter() - start
    verdict(1, "autodiff Jacobian vs central differences", worst < 1e-6 and elapsed < 120,
            f"max rel err {worst:.2e} < 1e-6, {elapsed:.1f} s < 120 s")


def test_02_svd_validity(weights, config, x0):
    mats = list(JACOBIANS)
    mats.append(jacobian_at(weights, config, x0))
    for i in range(10):
        x = make_image(CLASSES[i % 3], 300 + i).reshape(-1)
        mats.append(jacobian_at(weights, config, x))
    worst = 0.0
    descending = True
    for j in mats:
        svd = svd_analysis(j)
        n = j.shape[0]
        worst = max(worst,
                    np.linalg.norm(j - (svd.u * svd.s) @ svd.v.T) / np.linalg.norm(j),
                    np.linalg.norm(svd.u.T @ svd.u - np.eye(n)),
                    np.linalg.norm(svd.v.T @ svd.v - np.eye(n)))
        descending &= bool(np.all(np.diff(svd.s) <= 0))
    verdict(2, "SVD reconstruction, orthogonality, ordering", worst < 1e-10 and descending,
            f"{len(mats)} Jacobians, worst residual {worst:.2e} < 1e-10, descending={descending}")


def test_03_gradient_identity(weights, config):
    fn = model_fn(weights, config)
    worst = 0.0
    for i in range(10):
        x = make_image(CLASSES[i % 3], 100 + i).reshape(-1)
        target = embed(make_image(CLASSES[(i + 1) % 3], 200 + i), weights, config)
        j = jacobian_at(weights, config, x)
        explicit = j.T @ (fn(x) - target)
        worst = max(worst, np.max(np.abs(match_gradient(weights, config, x, target) - explicit)))
    verdict(3, "match gradient equals J^T (f(x) - target)", worst < 1e-10,
            f"10 pairs, max abs diff {worst:.2e} < 1e-10")


def test_04_top_singular_directions(weights, config, x0, svd):
    errs = []
    for i in range(5):
        est = ldlc_estimate(weights, config, x0, svd.v[:, i], epsilon=1e-3, grid_n=21)
        errs.append(abs(est.value - svd.s[i]) / svd.s[i])
    verdict(4, "directional Lipschitz along top-5 singular vectors", max(errs) < 0.05,
            f"max rel gap {max(errs):.2e} < 5%")


def test_05_direction_family_ordering(weights, config, x0):
    start = time.perf_counter()
    svd = analyze(weights, config, x0)
    dirs, skipped = direction_suite(svd, Rng(0), {"random": 200, "null": 200})
    dirs += optimized_directions(weights, config, x0, 200)
    dists = ldlc_distribution(weights, config, x0, dirs, epsilon=1e-3, grid_n=21)
    elapsed = time.perf_counter() - start
    med = {f: d.summary["median"] for f, d in dists.items()}
    counts = {f: len(d.estimates) for f, d in dists.items()}
    opt, rand, null = med["optimized"], med["random_gaussian"], med["null_projected"]
    ok = (all(c == 200 for c in counts.values()) and null <= 1e-2 * rand
          and opt > rand > null and elapsed < 600)
    verdict(5, "median ordering optimized > random > null", ok,
            f"medians {opt:.3g} > {rand:.3g} > {null:.3g}, random/null {rand / null:.0f} >= 100, "
            f"{elapsed:.1f} s < 600 s")


def test_06_seeded_match(setup, matched):
    weights, config, x0, target = setup
    x_star, trace = matched
    delta = np.abs(x_star - x0)
    cos = cosine_similarity(embed(x_star, weights, config), target)
    loss_ok = all(trace.loss[i] <= trace.loss[i - 1] or trace.clamped[i]
                  for i in range(1, len(trace.loss)))
    steady = float(np.mean(np.diff(trace.cosine) >= 0))
    ok = (trace.final_iter <= 5000 and cos >= 0.99 and delta.mean() <= 0.05
          and delta.max() <= 0.25 and loss_ok and steady >= 0.95)
    verdict(6, "seeded match reaches target imperceptibly", ok,
            f"{trace.final_iter} iters, cos {cos:.4f}, mean {delta.mean():.4f}, "
            f"max {delta.max():.4f}, loss monotone={loss_ok} ({trace.clamp_events} clamp events), "
            f"cos non-decreasing {steady:.0%}")


def test_07_learning_rate_insensitivity(setup):
    weights, config, x0, target = setup
    iters, cosines = [], []
    for lr in (0.005, 0.01, 0.05):
        _, trace = match_embedding(weights, config, x0, target, MatchConfig(learning_rate=lr))
        iters.append(trace.final_iter)
        cosines.append(trace.cosine[-1] if trace.converged else -1.0)
    ok = min(cosines) >= 0.99 and iters[0] > iters[1] > iters[2]
    verdict(7, "all learning rates converge, iterations fall as lr grows", ok,
            f"lr 0.005/0.01/0.05 -> {iters[0]}/{iters[1]}/{iters[2]} iters, min cos {min(cosines):.4f}")


def test_08_interpolation_is_roughly_linear(setup, matched):
    weights, config, x0, _ = setup
    trace = interpolate_trace(weights, config, x0, matched[0], 20)
    r2 = linear_fit_r2(trace.t, trace.cos_to_b)
    verdict(8, "cosine along original -> matched path is near linear", r2 >= 0.9,
            f"R^2 {r2:.3f} >= 0.9")


def test_09_null_walk(weights, config, x0, svd):
    trace = null_walk(weights, config, x0, step_len=0.5, n_steps=50, rng=Rng(0))
    disp, drift = trace.input_disp[-1], trace.embed_drift[-1]
    bound = 0.01 * svd.sigma_max * disp
    verdict(9, "null walk moves far while the embedding stays put", disp >= 1.0 and drift <= bound,
            f"disp {disp:.2f} >= 1, drift {drift:.4f} <= {bound:.4f}, "
            f"{trace.reprojections[-1]} reprojections")


def test_10_classification_flips():
    ctx = validate(PipelineConfig("classify"))
    _, rows, _ = classify_experiment(ctx, return_rows=True)
    right = sum(r["expected"] == r["predicted"] for r in rows)
    worst = max(r["mean_abs_delta"] for r in rows if r["kind"] == "matched")
    verdict(10, "originals keep their class, matched copies take the target's", right == 6
            and len(rows) == 6 and worst <= 0.05,
            f"{right}/6 as expected, worst mean |dpixel| {worst:.4f} <= 0.05, T={TEMPERATURE:g}")


def test_11_determinism(tmp_path):
    differing = []
    for exp in EXPERIMENTS:
        outs = []
        for k in range(2):
            out = tmp_path / f"{exp}-{k}"
            assert run_pipeline(PipelineConfig(exp, output_dir=str(out))) == 0
            outs.append({p.relative_to(out).as_posix(): p.read_bytes()
                         for p in sorted(out.rglob("*"))
                         if p.is_file() and p.name != "manifest.json"})
        if outs[0] != outs[1] or not outs[0]:
            differing.append(exp)
    verdict(11, "reruns give byte-identical outputs", not differing,
            f"{len(EXPERIMENTS)} experiments twice, differing: {differing or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
