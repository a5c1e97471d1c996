"""Empirical geometry of a toy vision transformer's embedding map.

Exact Jacobians by reverse-mode autodiff, null/normal-space splits from a
reduced SVD, local directional Lipschitz estimates, embedding matching by
gradient descent, and null-space walks.
"""

from .autodiff import finite_diff_jacobian, jacobian, record, vjp
from .classify import AnchorSet, build_anchor_set, nearest_anchor_classify
from .lipschitz import LdlcDistribution, LdlcEstimate, direction_suite, ldlc_distribution, ldlc_estimate
from .matching import (MatchConfig, MatchTrace, cosine_similarity, match_embedding,
                       match_gradient, match_loss, perturbation_report)
from .paths import PathTrace, WalkTrace, interpolate_trace, null_walk
from .spectral import JacobianSvd, jacobian_at, project_normal, project_null, svd_analysis
from .tensor import Rng, gaussian, layer_norm, matmul, reduced_svd, softmax_rows
from .vit import REFERENCE_CONFIG, VitConfig, VitWeights, embed, init_weights

__version__ = "0.1.0"
