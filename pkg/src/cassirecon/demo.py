"""Synthetic desk-scale inputs: smooth spectrally-correlated scenes and
binary coded apertures, all seeded and deterministic.
"""

import numpy as np


def make_scene(height, width, bands, seed=0, components=3):
    """A smooth nonnegative (H, W, B) cube in [0.02, 0.98].

    Each band mixes a few low-frequency spatial patterns with smoothly
    varying band weights, which gives realistic spatial and spectral
    correlation at any size.
    """
    rng = np.random.default_rng(seed)
    yy = np.linspace(0.0, 1.0, height)[:, None]
    xx = np.linspace(0.0, 1.0, width)[None, :]
    patterns = []
    for _ in range(components):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        py, px = rng.uniform(0.0, 2.0 * np.pi, size=2)
        patterns.append(np.sin(2.0 * np.pi * fy * yy + py) * np.sin(2.0 * np.pi * fx * xx + px))
    lam = np.linspace(0.0, 1.0, bands)
    cube = np.zeros((height, width, bands))
    for pat in patterns:
        center = rng.uniform(0.0, 1.0)
        widthp = rng.uniform(0.25, 0.6)
        weight = np.exp(-((lam - center) ** 2) / (2.0 * widthp ** 2))
        cube += pat[:, :, None] * weight[None, None, :]
    lo, hi = cube.min(), cube.max()
    span = hi - lo if hi > lo else 1.0
    return 0.02 + 0.96 * (cube - lo) / span


def make_mask(height, width, seed=0, density=0.5):
    """A seeded binary coded aperture with the given open fraction."""
    rng = np.random.default_rng(seed)
    return (rng.random((height, width)) < density).astype(np.float64)
