"""
Jacobian and singular spectrum of a toy transformer
===================================================

A 32x32 RGB image has 3072 pixels but the model returns only 16 numbers,
so at any input almost every pixel direction is invisible to first order.
"""

import sys

import numpy as np

from embedding_atlas import REFERENCE_CONFIG, init_weights, jacobian, svd_analysis
from embedding_atlas.autodiff import finite_diff_jacobian
from embedding_atlas.synthetic import make_image
from embedding_atlas.tensor import Rng
from embedding_atlas.vit import model_fn

config = REFERENCE_CONFIG
weights = init_weights(config, Rng(0))
fn = model_fn(weights, config)
x0 = make_image("stripes", 11).reshape(-1)

# exact Jacobian: one reverse pass per embedding coordinate
J = jacobian(fn, x0)
print("Jacobian shape:", J.shape)

# spot check a few columns against central differences
h = 1e-5
cols = [0, 1000, 3071]
steps = h * np.eye(3072)[cols]
fd = np.stack([(fn(x0 + e) - fn(x0 - e)) / (2 * h) for e in steps], axis=1)
print("max |J - FD| on spot columns:", np.abs(J[:, cols] - fd).max())

# the spectrum: 16 singular values, so a 3056-dimensional null space
svd = svd_analysis(J, x0)
print("singular values:", np.array2string(svd.s, precision=3))
print("sigma_max (local Lipschitz bound):", round(svd.sigma_max, 4))
print("null space dimension:", svd.input_dim - svd.effective_rank)

# a random pixel direction barely moves the embedding compared with v_1
d = Rng(1).normal(3072)
d /= np.linalg.norm(d)
print("|J d| random:", np.linalg.norm(J @ d), " |J v1|:", np.linalg.norm(J @ svd.v[:, 0]))

# pass --full for the whole finite-difference Jacobian (a few seconds)
if "--full" in sys.argv:
    J_fd = finite_diff_jacobian(fn, x0)
    print("full relative error:", np.abs(J - J_fd).max() / np.abs(J_fd).max())
