"""Nearest-anchor classification by cosine similarity.

Anchors are mean image embeddings per label. They play the role that text
class embeddings play in a multimodal model: an embedding is assigned to
the label whose anchor it points at most closely.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, as_tensor, softmax_rows
from .vit import ConfigError, embed

TEMPERATURE = 100.0


@dataclass(frozen=True)
class AnchorSet:
    labels: tuple
    anchors: np.ndarray  # (L, n)
    provenance: tuple = ()

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ConfigError("an anchor set needs at least two labels")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("anchor labels must be unique")
        if self.anchors.shape[0] != len(self.labels):
            raise DimensionError("one anchor per label required")
        if np.any(np.linalg.norm(self.anchors, axis=1) == 0):
            raise ConfigError("anchor embeddings must be non-zero")


def build_anchor_set(weights, config, labeled_inputs) -> AnchorSet:
    """``labeled_inputs`` maps label -> list of images; anchors are mean embeddings."""
    labels, anchors, provenance = [], [], []
    for label, images in labeled_inputs.items():
        images = list(images)
        if not images:
            raise ConfigError(f"label {label!r} has no inputs")
        embs = [embed(as_tensor(img), weights, config) for img in images]
        labels.append(label)
        anchors.append(np.mean(embs, axis=0))
        provenance.append(tuple(
            hashlib.sha256(as_tensor(img).tobytes()).hexdigest()[:16] for img in images))
    return AnchorSet(tuple(labels), np.stack(anchors), tuple(provenance))


def nearest_anchor_classify(emb, anchors: AnchorSet, temperature=TEMPERATURE):
    """Returns ``(label, cosines, softmax_scores)``; ties go to the lowest anchor index."""
    emb = as_tensor(emb).reshape(-1)
    if emb.size != anchors.anchors.shape[1]:
        raise DimensionError(f"embedding has {emb.size} entries, anchors {anchors.anchors.shape[1]}")
    norm = np.linalg.norm(emb)
    if norm == 0:
        raise ValueError("cannot classify a zero embedding")
    cos = anchors.anchors @ emb / (np.linalg.norm(anchors.anchors, axis=1) * norm)
    idx = int(np.argmax(cos))  # first maximum
    probs = softmax_rows(temperature * cos[None, :])[0]
    return anchors.labels[idx], cos, probs
