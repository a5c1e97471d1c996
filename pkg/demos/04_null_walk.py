"""
Walking through the null space
==============================

Each step follows a random direction the Jacobian cannot see. After 50
steps the image is far from where it started while the embedding is
almost unchanged.
"""

from embedding_atlas import REFERENCE_CONFIG, init_weights, null_walk
from embedding_atlas.spectral import analyze
from embedding_atlas.synthetic import make_image
from embedding_atlas.tensor import Rng

config = REFERENCE_CONFIG
weights = init_weights(config, Rng(0))
x0 = make_image("stripes", 11).reshape(-1)
sigma_max = analyze(weights, config, x0).sigma_max

trace = null_walk(weights, config, x0, step_len=0.5, n_steps=50, rng=Rng(0))
for k in range(0, 51, 10):
    print(f"step {k:2d}: |x - x0| {trace.input_disp[k]:.3f}   |f(x) - f(x0)| {trace.embed_drift[k]:.4f}")

disp, drift = trace.input_disp[-1], trace.embed_drift[-1]
print("drift relative to sigma_max * displacement:", round(drift / (sigma_max * disp), 5))
print("corrections applied:", trace.reprojections[-1])
