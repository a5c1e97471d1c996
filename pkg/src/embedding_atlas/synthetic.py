"""Seeded synthetic images: stripes, checkers and disks at distinct frequencies.

Values stay inside [0.1, 0.9] so gradient steps have room before the
[0, 1] clamp bites.
"""

from __future__ import annotations

import numpy as np

from .tensor import Rng

CLASSES = ("stripes", "checkers", "disks")
# per-class mean colour (channel levels in [0, 1]); each class leans towards one hue
PALETTES = {
    "stripes": (1.0, 0.45, 0.3),
    "checkers": (0.3, 1.0, 0.45),
    "disks": (0.45, 0.3, 1.0),
}


def _grid(size):
    coords = (np.arange(size) + 0.5) / size
    return np.meshgrid(coords, coords, indexing="ij")


def pattern(kind: str, size: int, rng: Rng) -> np.ndarray:
    """A single-channel pattern in [-1, 1]."""
    yy, xx = _grid(size)
    jitter = rng.uniform(4)
    if kind == "stripes":
        angle = (jitter[0] - 0.5) * 0.6
        freq = 3.0 + jitter[1]
        t = np.cos(angle) * yy + np.sin(angle) * xx
        return np.sin(2 * np.pi * freq * t + 2 * np.pi * jitter[2])
    if kind == "checkers":
        freq = 4.0 + 2.0 * jitter[1]
        return (np.sin(2 * np.pi * freq * (yy + 0.2 * jitter[2]))
                * np.sin(2 * np.pi * freq * (xx + 0.2 * jitter[3])))
    if kind == "disks":
        cy, cx = 0.3 + 0.4 * jitter[0], 0.3 + 0.4 * jitter[1]
        r = np.hypot(yy - cy, xx - cx)
        return np.cos(2 * np.pi * (1.5 + jitter[2]) * r)
    raise ValueError(f"unknown pattern kind {kind!r}")


def make_image(kind: str, seed: int, size: int = 32, channels: int = 3,
               noise: float = 0.03) -> np.ndarray:
    """A (channels, size, size) image of class ``kind`` in [0.1, 0.9]."""
    rng = Rng(seed, stream=CLASSES.index(kind) if kind in CLASSES else 99)
    base = pattern(kind, size, rng)
    palette = np.resize(np.array(PALETTES.get(kind, (0.5,) * channels)), channels)
    level = 0.25 + 0.5 * palette + 0.05 * (rng.uniform(channels) - 0.5)
    amp = 0.15 + 0.05 * rng.uniform(channels)
    img = level[:, None, None] + amp[:, None, None] * base[None, :, :]
    img = img + noise * rng.normal((channels, size, size))
    return np.clip(img, 0.1, 0.9)


def class_images(seed: int, per_class: int, size: int = 32, channels: int = 3):
    """``{label: [images]}`` for every synthetic class."""
    return {
        kind: [make_image(kind, seed * 1000 + i, size, channels) for i in range(per_class)]
        for kind in CLASSES
    }
