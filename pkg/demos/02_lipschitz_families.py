"""
How far does the embedding move along different directions?
===========================================================

Directional Lipschitz estimates for three kinds of unit direction:
random Gaussian, Gaussian projected onto the null space, and matching
gradients (directions chosen to move the embedding).
"""

import numpy as np

from embedding_atlas import REFERENCE_CONFIG, init_weights
from embedding_atlas.lipschitz import direction_suite, ldlc_distribution, ldlc_estimate
from embedding_atlas.pipeline import optimized_directions
from embedding_atlas.spectral import analyze
from embedding_atlas.synthetic import make_image
from embedding_atlas.tensor import Rng

config = REFERENCE_CONFIG
weights = init_weights(config, Rng(0))
x0 = make_image("stripes", 11).reshape(-1)
svd = analyze(weights, config, x0)

# along right singular vectors the estimate recovers the singular value
for i in range(3):
    est = ldlc_estimate(weights, config, x0, svd.v[:, i])
    print(f"v{i + 1}: estimate {est.value:.5f}  sigma {svd.s[i]:.5f}")

# 40 directions per family keeps this quick; the CLI default is 200
dirs, _ = direction_suite(svd, Rng(0), {"random": 40, "null": 40})
dirs += optimized_directions(weights, config, x0, 40)
dists = ldlc_distribution(weights, config, x0, dirs)

for family, dist in dists.items():
    s = dist.summary
    print(f"{family:>16}: median {s['median']:.3e}  range [{s['min']:.2e}, {s['max']:.2e}]")

ratio = dists["random_gaussian"].summary["median"] / dists["null_projected"].summary["median"]
print("random / null median ratio:", round(ratio))
