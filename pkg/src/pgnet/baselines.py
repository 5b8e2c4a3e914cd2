"""Comparison fusers: plain bicubic upsampling and SFIM."""

import numpy as np

from .degradation import DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA, blur_pad, gaussian_kernel
from .errors import ConfigError, DimensionError
from .tensor import Tensor, bicubic_resize, no_grad

SFIM_EPS = 1e-6


def bicubic_baseline(lr: np.ndarray, ratio: int) -> np.ndarray:
    """Per-band bicubic upsampling of a (bands, h, w) cube."""
    if ratio < 1:
        raise ConfigError(f"ratio must be >= 1, got {ratio}")
    lr = np.asarray(lr)
    dtype = np.float64 if lr.dtype == np.float64 else np.float32
    with no_grad():
        out = bicubic_resize(Tensor(lr[None].astype(dtype)), ratio)
    return out.data[0]


def smooth(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """'Same'-size correlation of a 2-d image with reflect padding."""
    k = kernel.shape[0]
    before, after = blur_pad(k)
    p = np.pad(np.asarray(img, dtype=np.float64), ((before, after), (before, after)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(p, (k, k))
    return np.einsum("ijkl,kl->ij", win, kernel)


def sfim(lr_up: np.ndarray, pan: np.ndarray, kernel: np.ndarray = None) -> np.ndarray:
    """out_b = lr_up_b * pan / smooth(pan), denominator guarded at 1e-6."""
    lr_up = np.asarray(lr_up)
    pan = np.asarray(pan, dtype=np.float64)
    if pan.ndim == 3:
        pan = pan[0]
    if lr_up.shape[1:] != pan.shape:
        raise DimensionError(f"upsampled LR {lr_up.shape} and PAN {pan.shape} differ in extent")
    if kernel is None:
        kernel = gaussian_kernel(DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA)
    low = smooth(pan, kernel)
    den = np.where(np.abs(low) < SFIM_EPS, np.where(low < 0, -SFIM_EPS, SFIM_EPS), low)
    out = lr_up.astype(np.float64) * (pan / den)[None]
    return out.astype(lr_up.dtype if lr_up.dtype == np.float64 else np.float32)
