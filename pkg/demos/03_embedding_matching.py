"""
Matching one image's embedding to another's
============================================

Gradient descent on 0.5 |f(x) - f(target)|^2 moves a stripes image until
the model sees it as the checkers image, with only small pixel changes.
"""

import numpy as np

from embedding_atlas import (REFERENCE_CONFIG, MatchConfig, cosine_similarity, embed,
                             init_weights, interpolate_trace, match_embedding, perturbation_report)
from embedding_atlas.paths import linear_fit_r2
from embedding_atlas.synthetic import make_image
from embedding_atlas.tensor import Rng

config = REFERENCE_CONFIG
weights = init_weights(config, Rng(0))
x0 = make_image("stripes", 11)
target = embed(make_image("checkers", 12), weights, config)
print("starting cosine:", round(cosine_similarity(embed(x0, weights, config), target), 4))

x_star, trace = match_embedding(weights, config, x0, target, MatchConfig(learning_rate=0.05))
rep = perturbation_report(x0, x_star)
print(f"stopped after {trace.final_iter} steps ({trace.stop_reason}), cosine {trace.cosine[-1]:.4f}")
print(f"mean |dpixel| {rep['mean_abs']:.4f}, max {rep['max_abs']:.4f}")

# smaller steps get there too, just more slowly
for lr in (0.005, 0.01):
    _, t = match_embedding(weights, config, x0, target, MatchConfig(learning_rate=lr))
    print(f"lr {lr}: {t.final_iter} steps")

# walking the straight pixel path back, the cosine to the target changes steadily
path = interpolate_trace(weights, config, x0, x_star, 10)
print("cosine along path:", np.array2string(path.cos_to_b, precision=3))
print("linear fit R^2:", round(linear_fit_r2(path.t, path.cos_to_b), 3))
