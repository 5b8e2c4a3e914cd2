"""Training losses: per-pixel squared spectral error and spectral angle."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, op

SAM_EPS = 1e-8
DEFAULT_ALPHA = 0.01


def _check_pair(pred: Tensor, ref: Tensor):
    pred, ref = as_tensor(pred), as_tensor(ref)
    if pred.shape != ref.shape:
        raise DimensionError(f"pred {pred.shape} and ref {ref.shape} differ")
    if pred.ndim != 4:
        raise DimensionError(f"expected (b, bands, h, w) tensors, got {pred.shape}")
    return pred, ref


def mse_loss(pred, ref) -> Tensor:
    """Squared Euclidean spectral distance, averaged over pixels (not bands)."""
    pred, ref = _check_pair(pred, ref)
    b, _, h, w = pred.shape
    d = pred - ref
    return (d * d).sum() * (1.0 / (b * h * w))


def _unit(v: np.ndarray, eps: float):
    n = np.sqrt((v * v).sum(axis=1, keepdims=True))
    return v / np.maximum(n, eps), n


def spectral_angle(pred, ref, eps: float = SAM_EPS) -> Tensor:
    """Per-pixel angle between spectra along axis 1, shape (b, 1, h, w).

    Evaluated as 2*atan2(|u - v|, |u + v|) on unit vectors, which equals
    arccos of the clamped cosine but stays exact near 0 and pi. Zero
    spectra are guarded by ``eps`` in the norm.
    """
    pred, ref = as_tensor(pred), as_tensor(ref)
    x = pred.data.astype(np.float64)
    y = ref.data.astype(np.float64)
    u, nx = _unit(x, eps)
    v, ny = _unit(y, eps)
    dn = np.sqrt(((u - v) ** 2).sum(axis=1, keepdims=True))
    sn = np.sqrt(((u + v) ** 2).sum(axis=1, keepdims=True))
    theta = 2.0 * np.arctan2(dn, sn)

    def bw(g):
        g = g.astype(np.float64)
        cos = np.cos(theta)
        out = []
        for a, b, na, t in ((u, v, nx, pred), (v, u, ny, ref)):
            if not t.requires_grad:
                out.append(None)
                continue
            # d theta / d a = (a_hat cos - b_hat) / (|a| sin), direction norm equals sin
            dirn = a * cos - b
            s = np.sqrt((dirn * dirn).sum(axis=1, keepdims=True))
            ok = (s > 0) & (na > eps)
            grad = np.where(ok, dirn / np.where(ok, s * na, 1.0), 0.0) * g
            out.append(grad.astype(t.dtype))
        return tuple(out)

    return op(theta.astype(pred.dtype), (pred, ref), bw, "spectral_angle")


def sam_loss(pred, ref, eps: float = SAM_EPS) -> Tensor:
    """Mean spectral angle in radians."""
    pred, ref = _check_pair(pred, ref)
    return spectral_angle(pred, ref, eps).mean()


def combined_loss(pred, ref, alpha: float = DEFAULT_ALPHA) -> Tensor:
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    loss = mse_loss(pred, ref)
    if alpha == 0:
        return loss
    return loss + sam_loss(pred, ref) * alpha
