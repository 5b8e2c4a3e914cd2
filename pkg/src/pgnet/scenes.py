"""Deterministic synthetic HR cubes built from the linear mixing model."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .unmixing import synthetic_endmembers, synthetic_wavelengths

SCENE_WAVELENGTHS_UM = (0.4, 1.0)
SCENE_SMOOTHNESS = 4.0
SCENE_SHARPNESS = 2.0


@dataclass
class Scene:
    cube: np.ndarray          # (bands, H, W) float32
    endmembers: np.ndarray    # (bands, c)
    abundance: np.ndarray     # (c, H, W), sum-to-one per pixel
    wavelengths: np.ndarray   # (bands,) micrometres


def smooth_abundance(c: int, h: int, w: int, rng: np.random.Generator,
                     smoothness: float = SCENE_SMOOTHNESS, sharpness: float = SCENE_SHARPNESS) -> np.ndarray:
    """Sum-to-one maps from a softmax over Gaussian-smoothed random fields.

    ``smoothness`` is the field correlation length in pixels; ``sharpness``
    scales the logits, so larger values give crisper region boundaries.
    """
    fields = np.stack([gaussian_filter(rng.normal(size=(h, w)), smoothness, mode="wrap") for _ in range(c)])
    fields /= fields.std(axis=(1, 2), keepdims=True) + 1e-12
    logits = sharpness * fields
    logits -= logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def synthetic_scene(bands: int, c: int, height: int, width: int, seed: int,
                    smoothness: float = SCENE_SMOOTHNESS, sharpness: float = SCENE_SHARPNESS) -> Scene:
    if bands < 2 or c < 2 or c >= bands:
        raise ConfigError(f"need 2 <= endmembers < bands, got bands={bands}, c={c}")
    rng = np.random.default_rng(seed)
    wl = synthetic_wavelengths(bands, *SCENE_WAVELENGTHS_UM)
    e = synthetic_endmembers(bands, c, int(rng.integers(2 ** 31)), wl)
    a = smooth_abundance(c, height, width, rng, smoothness, sharpness)
    cube = np.tensordot(e, a, axes=1).astype(np.float32)
    return Scene(cube, e, a, wl)
