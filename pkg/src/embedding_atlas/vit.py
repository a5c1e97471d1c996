"""A small post-norm vision transformer, written against the autodiff primitives.

The forward pass is::

    image -> patches @ W_p + pos
          -> n_layers x [multi-head attention, residual, LN, ReLU MLP, residual, LN]
          -> mean over tokens -> @ W_e

Every function here accepts either plain arrays or traced ``Var`` inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .tensor import DimensionError, Rng, as_tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VitConfig:
    image_size: int = 32
    channels: int = 3
    patch_size: int = 8
    d_model: int = 32
    n_heads: int = 4
    head_dim: int = 8
    mlp_hidden: int = 64
    n_layers: int = 2
    embed_dim: int = 16

    def __post_init__(self):
        for f in fields(self):
            if int(getattr(self, f.name)) < 1:
                raise ConfigError(f"{f.name} must be a positive integer")
        if self.image_size % self.patch_size:
            raise ConfigError("image_size must be divisible by patch_size")
        if self.n_heads * self.head_dim != self.d_model:
            raise ConfigError("n_heads * head_dim must equal d_model")
        if self.embed_dim >= self.input_dim:
            raise ConfigError("embed_dim must be smaller than the input dimension")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * self.channels

    @property
    def input_dim(self) -> int:
        return self.channels * self.image_size ** 2

    @property
    def image_shape(self) -> tuple:
        return (self.channels, self.image_size, self.image_size)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


REFERENCE_CONFIG = VitConfig()


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray  # (H, d, k)
    wk: np.ndarray  # (H, d, k)
    wv: np.ndarray  # (H, d, k)
    wc: np.ndarray  # (H, k, d)
    gamma1: np.ndarray
    beta1: np.ndarray
    gamma2: np.ndarray
    beta2: np.ndarray
    w1: np.ndarray  # (d, mlp_hidden)
    w2: np.ndarray  # (mlp_hidden, d)

    def tensors(self):
        return [getattr(self, f.name) for f in fields(self)]


@dataclass(frozen=True)
class VitWeights:
    w_patch: np.ndarray  # (patch_dim, d)
    pos: np.ndarray  # (n_patches, d)
    layers: tuple
    w_embed: np.ndarray  # (d, embed_dim)

    def tensors(self):
        """Every weight tensor in serialisation order."""
        out = [self.w_patch, self.pos]
        for layer in self.layers:
            out.extend(layer.tensors())
        out.append(self.w_embed)
        return out

    def check(self, config: VitConfig):
        expected = weight_shapes(config)
        got = [t.shape for t in self.tensors()]
        if got != expected:
            raise DimensionError("weights do not match config")
        for t in self.tensors():
            if not np.all(np.isfinite(t)):
                raise ConfigError("weights contain non-finite entries")


def weight_shapes(config: VitConfig) -> list:
    d, h, k, hid = config.d_model, config.n_heads, config.head_dim, config.mlp_hidden
    shapes = [(config.patch_dim, d), (config.n_patches, d)]
    for _ in range(config.n_layers):
        shapes += [(h, d, k)] * 3 + [(h, k, d)] + [(d,)] * 4 + [(d, hid), (hid, d)]
    shapes.append((d, config.embed_dim))
    return shapes


def weights_from_tensors(config: VitConfig, tensors) -> VitWeights:
    tensors = [as_tensor(t) for t in tensors]
    per_layer = 10
    if len(tensors) != 3 + per_layer * config.n_layers:
        raise DimensionError("wrong number of weight tensors for config")
    layers = tuple(
        LayerWeights(*tensors[2 + i * per_layer: 2 + (i + 1) * per_layer])
        for i in range(config.n_layers)
    )
    w = VitWeights(tensors[0], tensors[1], layers, tensors[-1])
    w.check(config)
    return w


def init_weights(config: VitConfig, rng: Rng) -> VitWeights:
    """Gaussian weights scaled by 1/sqrt(fan_in); LN gains one, biases zero.

    Patch filters are made zero-mean over their fan-in, so a uniform
    brightness offset inside a patch projects to nothing and embeddings are
    not dominated by the average pixel level.
    """
    if not isinstance(config, VitConfig):
        raise ConfigError("init_weights needs a VitConfig")
    d, h, k, hid = config.d_model, config.n_heads, config.head_dim, config.mlp_hidden

    def gauss(shape, fan_in):
        return rng.normal(shape) / np.sqrt(fan_in)

    w_patch = gauss((config.patch_dim, d), config.patch_dim)
    w_patch -= w_patch.mean(axis=0, keepdims=True)
    pos = gauss((config.n_patches, d), d)
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerWeights(
            wq=gauss((h, d, k), d),
            wk=gauss((h, d, k), d),
            wv=gauss((h, d, k), d),
            wc=gauss((h, k, d), k * h),
            gamma1=np.ones(d), beta1=np.zeros(d),
            gamma2=np.ones(d), beta2=np.zeros(d),
            w1=gauss((d, hid), d),
            w2=gauss((hid, d), hid),
        ))
    w_embed = gauss((d, config.embed_dim), d)
    return VitWeights(w_patch, pos, tuple(layers), w_embed)


def patch_matrix(image, config: VitConfig):
    """Rows are the non-overlapping patches in row-major grid order, channel-major inside."""
    c, g, p = config.channels, config.grid, config.patch_size
    size = np.prod(image.shape)
    if size != config.input_dim:
        raise DimensionError(f"image has {size} values, config expects {config.input_dim}")
    x = image.reshape((c, g, p, g, p))
    x = ad.transpose(x, (1, 3, 0, 2, 4))
    return x.reshape((g * g, c * p * p))


def patchify(image, weights: VitWeights, config: VitConfig):
    return ad.add(ad.matmul(patch_matrix(image, config), weights.w_patch), weights.pos)


def attention_block(x, layer: LayerWeights, config: VitConfig, probe=None):
    """One post-norm transformer block on an (n_patches, d) token matrix.

    If ``probe`` is a dict, the attention weights and LN inputs are stored
    in it (plain-value forward passes only).
    """
    k = config.head_dim
    mixed = None
    alphas = []
    for h in range(config.n_heads):
        q = ad.matmul(x, layer.wq[h])
        kk = ad.matmul(x, layer.wk[h])
        v = ad.matmul(x, layer.wv[h])
        alpha = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(kk)), 1.0 / np.sqrt(k)))
        alphas.append(alpha)
        head = ad.matmul(ad.matmul(alpha, v), layer.wc[h])
        mixed = head if mixed is None else ad.add(mixed, head)
    pre1 = ad.add(x, mixed)
    u = ad.layer_norm(pre1, layer.gamma1, layer.beta1)
    z_prime = ad.matmul(ad.relu(ad.matmul(u, layer.w1)), layer.w2)
    pre2 = ad.add(u, z_prime)
    z = ad.layer_norm(pre2, layer.gamma2, layer.beta2)
    if probe is not None:
        probe.setdefault("alpha", []).append(alphas)
        probe.setdefault("ln_inputs", []).extend([pre1, pre2])
    return z


def embed(image, weights: VitWeights, config: VitConfig, probe=None):
    """Map an image (any shape with ``input_dim`` entries) to its raw embedding."""
    tokens = patchify(image, weights, config)
    if len(weights.layers) != config.n_layers:
        raise DimensionError("weights have a different layer count than config")
    for layer in weights.layers:
        tokens = attention_block(tokens, layer, config, probe)
    return ad.matmul(ad.reshape(ad.mean_rows(tokens), (1, config.d_model)),
                     weights.w_embed).reshape((config.embed_dim,))


def model_fn(weights: VitWeights, config: VitConfig):
    """``x -> embed(x)`` closure, usable with the autodiff drivers."""
    return lambda x: embed(x, weights, config)
