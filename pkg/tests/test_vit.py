import math
from types import SimpleNamespace

import numpy as np
import pytest

from embedding_atlas import autodiff as ad
from embedding_atlas.io import load_weights, save_weights
from embedding_atlas.tensor import LN_EPS, DimensionError, Rng
from embedding_atlas.vit import (REFERENCE_CONFIG, ConfigError, LayerWeights, VitConfig,
                                 attention_block, embed, init_weights, patch_matrix, patchify,
                                 weight_shapes)


def test_reference_config_shape():
    c = REFERENCE_CONFIG
    assert (c.input_dim, c.embed_dim, c.n_patches, c.patch_dim) == (3072, 16, 16, 192)


@pytest.mark.parametrize("kwargs", [
    {"image_size": 30},
    {"n_heads": 3},
    {"embed_dim": 4000},
    {"d_model": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        VitConfig(**kwargs)


def test_init_deterministic(config):
    a = init_weights(config, Rng(3)).tensors()
    b = init_weights(config, Rng(3)).tensors()
    c = init_weights(config, Rng(4)).tensors()
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])
    assert [t.shape for t in a] == weight_shapes(config)


def test_init_scale_and_ln_params():
    config = VitConfig(d_model=128, n_heads=4, head_dim=32)
    w = init_weights(config, Rng(0))
    wq = np.concatenate([layer.wq.ravel() for layer in w.layers])
    assert wq.size >= 10_000
    assert abs(wq.std() * np.sqrt(config.d_model) - 1.0) < 0.1
    for layer in w.layers:
        assert np.array_equal(layer.gamma1, np.ones(128))
        assert np.array_equal(layer.beta2, np.zeros(128))


def test_init_rejects_non_config():
    with pytest.raises(ConfigError):
        init_weights({"d_model": 32}, Rng(0))


# -- patchify -------------------------------------------------------------

def tiny_config(channels=1):
    return VitConfig(image_size=2, channels=channels, patch_size=1, d_model=1, n_heads=1,
                     head_dim=1, mlp_hidden=1, n_layers=1, embed_dim=1)


def test_patchify_zero(config, weights):
    w = init_weights(config, Rng(1))
    w = type(w)(w.w_patch, np.zeros_like(w.pos), w.layers, w.w_embed)
    assert np.array_equal(patchify(np.zeros(config.input_dim), w, config), np.zeros((16, 32)))


def test_patchify_row_major():
    cfg = tiny_config()
    w = init_weights(cfg, Rng(0))
    w = type(w)(np.ones((1, 1)), np.zeros((4, 1)), w.layers, w.w_embed)
    img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    assert np.array_equal(patchify(img, w, cfg)[:, 0], [1.0, 2.0, 3.0, 4.0])


def test_patch_matrix_layout(config):
    img = Rng(2).uniform(config.image_shape)
    p = config.patch_size
    rows = patch_matrix(img, config)
    assert rows.shape == (16, 192)
    for gi in range(config.grid):
        for gj in range(config.grid):
            ref = img[:, gi * p:(gi + 1) * p, gj * p:(gj + 1) * p].ravel()
            assert np.array_equal(rows[gi * config.grid + gj], ref)


def test_patch_matrix_size_check(config):
    with pytest.raises(DimensionError):
        patch_matrix(np.zeros(100), config)


# -- attention block ------------------------------------------------------

def scalar_block(x, wq, wk, wv, wc, w1, w2):
    """Two tokens, d = 2, one head of width 1, identity LN affine; plain floats."""
    def ln(row):
        mu = sum(row) / 2
        var = sum((r - mu) ** 2 for r in row) / 2
        return [(r - mu) / math.sqrt(var + LN_EPS) for r in row]

    q = [x[t][0] * wq[0] + x[t][1] * wq[1] for t in range(2)]
    k = [x[t][0] * wk[0] + x[t][1] * wk[1] for t in range(2)]
    v = [x[t][0] * wv[0] + x[t][1] * wv[1] for t in range(2)]
    out = []
    for t in range(2):
        logits = [q[t] * k[s] for s in range(2)]
        mx = max(logits)
        e = [math.exp(l - mx) for l in logits]
        a = [ei / sum(e) for ei in e]
        mix = a[0] * v[0] + a[1] * v[1]
        u = ln([x[t][i] + mix * wc[i] for i in range(2)])
        hidden = [max(0.0, u[0] * w1[0][j] + u[1] * w1[1][j]) for j in range(3)]
        mlp = [sum(hidden[j] * w2[j][i] for j in range(3)) for i in range(2)]
        out.append(ln([u[i] + mlp[i] for i in range(2)]))
    return out


def test_attention_block_scalar_oracle():
    r = Rng(11)
    x = r.normal((2, 2))
    wq, wk, wv, wc = r.normal(2), r.normal(2), r.normal(2), r.normal(2)
    w1, w2 = r.normal((2, 3)), r.normal((3, 2))
    layer = LayerWeights(wq.reshape(1, 2, 1), wk.reshape(1, 2, 1), wv.reshape(1, 2, 1),
                         wc.reshape(1, 1, 2), np.ones(2), np.zeros(2), np.ones(2), np.zeros(2),
                         w1, w2)
    got = attention_block(x, layer, SimpleNamespace(head_dim=1, n_heads=1))
    ref = scalar_block(x.tolist(), wq, wk, wv, wc, w1.tolist(), w2.tolist())
    assert np.max(np.abs(got - np.array(ref))) < 1e-12


def test_single_token_attends_to_itself(config, weights):
    probe = {}
    attention_block(Rng(1).normal((1, 32)), weights.layers[0], config, probe)
    for alpha in probe["alpha"][0]:
        assert np.array_equal(alpha, [[1.0]])


def test_attention_rows_are_distributions(config, weights, x0):
    probe = {}
    embed(x0, weights, config, probe)
    for per_layer in probe["alpha"]:
        for alpha in per_layer:
            assert np.all(alpha >= 0)
            assert np.max(np.abs(alpha.sum(axis=1) - 1.0)) < 1e-12


def test_layer_norm_outputs_inside_model(config, weights, x0):
    probe = {}
    embed(x0, weights, config, probe)
    assert len(probe["ln_inputs"]) == 2 * config.n_layers
    for pre in probe["ln_inputs"]:
        xc = pre - pre.mean(axis=1, keepdims=True)
        var = (xc ** 2).mean(axis=1)
        xhat = xc / np.sqrt(var + LN_EPS)[:, None]
        assert np.max(np.abs(xhat.mean(axis=1))) < 1e-10
        # unit std up to the variance guard
        assert np.max(np.abs(xhat.std(axis=1) - np.sqrt(var / (var + LN_EPS)))) < 1e-12


# -- embed ----------------------------------------------------------------

def test_embed_deterministic_and_shaped(config, weights, x0):
    a = embed(x0, weights, config)
    assert a.shape == (16,)
    assert a.tobytes() == embed(x0.copy(), weights, config).tobytes()
    assert a.tobytes() == embed(x0.reshape(config.image_shape), weights, config).tobytes()


def test_embed_sensitive_to_patch_order(config, weights, x0):
    img = x0.reshape(config.image_shape)
    swapped = img.copy()
    swapped[:, :8, :8], swapped[:, :8, 8:16] = img[:, :8, 8:16], img[:, :8, :8]
    assert not np.allclose(embed(img, weights, config), embed(swapped, weights, config))


def test_embed_continuous_along_line(fn, x0, svd):
    d = Rng(3).normal(x0.size)
    d /= np.linalg.norm(d)
    ts = np.linspace(-1e-3, 1e-3, 100)
    outs = np.stack([fn(x0 + t * d) for t in ts])
    jumps = np.linalg.norm(np.diff(outs, axis=0), axis=1)
    assert np.max(jumps) <= 1.5 * svd.sigma_max * (ts[1] - ts[0])


def test_weight_file_roundtrip(tmp_path, config, weights, x0):
    save_weights(weights, config, tmp_path / "w.evit")
    cfg2, w2 = load_weights(tmp_path / "w.evit")
    assert cfg2 == config
    assert all(a.tobytes() == b.tobytes() for a, b in zip(weights.tensors(), w2.tensors()))
    assert embed(x0, w2, cfg2).tobytes() == embed(x0, weights, config).tobytes()


def test_model_records_on_tape(fn, x0):
    _, tape = ad.record(fn, x0)
    ops = {node.op for node in tape.nodes}
    assert {"matmul", "softmax_rows", "layer_norm", "relu", "mean_pool"} <= ops
