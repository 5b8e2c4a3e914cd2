"""Scene simulation: Gaussian blur + decimation of an HR cube, PAN
synthesis through a spectral response, additive noise and patch cutting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, FormatError

DEFAULT_KERNEL_SIZE = 16
DEFAULT_SIGMA = 0.8493
DEFAULT_NOISE_STD = 0.01
VISIBLE_RANGE_UM = (0.4, 0.7)


@dataclass
class DegradationConfig:
    ratio: int = 16
    kernel_size: int = DEFAULT_KERNEL_SIZE
    sigma: float = DEFAULT_SIGMA
    noise_std: float = DEFAULT_NOISE_STD
    seed: int = 0

    def __post_init__(self):
        if self.ratio < 1:
            raise ConfigError(f"ratio must be >= 1, got {self.ratio}")
        if self.kernel_size < 1 or self.sigma <= 0:
            raise ConfigError("kernel size must be >= 1 and sigma > 0")
        if self.noise_std < 0:
            raise ConfigError("noise std must be >= 0")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Isotropic Gaussian sampled on a size x size grid centred at (size-1)/2, summing to 1."""
    if size < 1 or sigma <= 0:
        raise ConfigError(f"need size >= 1 and sigma > 0, got {size}, {sigma}")
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _check_cube(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise DimensionError(f"expected a (bands, H, W) cube, got shape {x.shape}")
    return x


def blur_pad(size: int) -> Tuple[int, int]:
    """Padding (before, after) that aligns tap t with offset t - (size-1)//2."""
    return (size - 1) // 2, size // 2


def degrade_spatial(x: np.ndarray, cfg: DegradationConfig, kernel: Optional[np.ndarray] = None) -> np.ndarray:
    """Blur each band with reflect padding, then keep every r-th pixel from offset r//2.

    Only the retained sites are evaluated. Output is (bands, H/r, W/r).
    """
    x = _check_cube(x)
    r = cfg.ratio
    b, h, w = x.shape
    if h % r or w % r:
        raise ConfigError(f"extents {h}x{w} are not divisible by ratio {r}")
    if kernel is None:
        kernel = gaussian_kernel(cfg.kernel_size, cfg.sigma)
    k = kernel.shape[0]
    before, after = blur_pad(k)
    if max(before, after) >= min(h, w):
        raise ConfigError(f"kernel size {k} too large for reflect padding of a {h}x{w} image")
    xp = np.pad(x.astype(np.float64), ((0, 0), (before, after), (before, after)), mode="reflect")
    off = r // 2
    # window (i, j) of the padded image is centred on original pixel (i, j)
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, off::r, off::r]
    out = np.einsum("bijkl,kl->bij", win, kernel)
    return out.astype(x.dtype if x.dtype == np.float64 else np.float32)


def uniform_srf(bands: int, wavelengths: Optional[Sequence[float]] = None) -> np.ndarray:
    """Uniform weights over the visible bands (all bands when no wavelengths are known)."""
    if wavelengths is None:
        s = np.ones(bands)
    else:
        wl = np.asarray(wavelengths, dtype=np.float64)
        if wl.shape != (bands,):
            raise DimensionError(f"{wl.size} wavelengths for {bands} bands")
        s = ((wl >= VISIBLE_RANGE_UM[0]) & (wl <= VISIBLE_RANGE_UM[1])).astype(np.float64)
        if not s.any():
            s = np.ones(bands)
    return s / s.sum()


def normalize_srf(weights) -> np.ndarray:
    s = np.asarray(weights, dtype=np.float64)
    if s.ndim != 1 or np.any(s < 0) or not np.all(np.isfinite(s)) or s.sum() <= 0:
        raise ConfigError("SRF weights must be a nonnegative, finite, non-zero vector")
    return s / s.sum()


def read_srf_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    """Read ``wavelength_um,weight`` rows; returns (wavelengths, renormalized weights)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["wavelength_um", "weight"]:
        raise FormatError(f"{path}: expected header 'wavelength_um,weight'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise FormatError(f"{path}: no SRF rows")
    return data[:, 0], normalize_srf(data[:, 1])


def write_srf_csv(path, wavelengths, weights) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("wavelength_um,weight\n")
        for wl, wt in zip(wavelengths, weights):
            fh.write(f"{wl:.9g},{wt:.9g}\n")


def synthesize_pan(x: np.ndarray, srf) -> np.ndarray:
    """Pixel-wise inner product of each spectrum with the SRF; returns (H, W)."""
    x = _check_cube(x)
    s = np.asarray(srf, dtype=np.float64)
    if s.shape != (x.shape[0],):
        raise DimensionError(f"SRF length {s.size} != bands {x.shape[0]}")
    return np.tensordot(s, x.astype(np.float64), axes=1).astype(np.float64 if x.dtype == np.float64 else np.float32)


def add_noise(img: np.ndarray, std: float, seed: int) -> np.ndarray:
    if std < 0:
        raise ConfigError(f"noise std must be >= 0, got {std}")
    img = np.asarray(img)
    if std == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return (img + rng.normal(0.0, std, size=img.shape)).astype(img.dtype)


def simulate(hr: np.ndarray, srf, cfg: DegradationConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Wald-protocol pair (noisy LR cube, noisy PAN) from a reference cube.

    Noise is drawn after both degradations, independently for LR and PAN.
    """
    lr = degrade_spatial(hr, cfg)
    pan = synthesize_pan(hr, srf)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    lr = add_noise(lr, cfg.noise_std, int(seeds[0].generate_state(1)[0]))
    pan = add_noise(pan, cfg.noise_std, int(seeds[1].generate_state(1)[0]))
    return lr.astype(np.float32), pan.astype(np.float32)


PatchTriple = Tuple[np.ndarray, np.ndarray, np.ndarray]


def patchify(hr: np.ndarray, pan: np.ndarray, lr: np.ndarray, hr_patch: int, ratio: int) -> List[PatchTriple]:
    """Cut aligned, non-overlapping (hr, pan, lr) patches in row-major order."""
    hr = _check_cube(hr)
    lr = _check_cube(lr)
    pan = np.asarray(pan)
    if pan.ndim == 3:
        if pan.shape[0] != 1:
            raise DimensionError(f"PAN must have one channel, got {pan.shape[0]}")
        pan = pan[0]
    if hr_patch % ratio:
        raise ConfigError(f"patch {hr_patch} not divisible by ratio {ratio}")
    h, w = hr.shape[1:]
    if pan.shape != (h, w):
        raise DimensionError(f"PAN {pan.shape} does not match HR extents {(h, w)}")
    if lr.shape[1:] != (h // ratio, w // ratio) or h % ratio or w % ratio:
        raise DimensionError(f"LR extents {lr.shape[1:]} inconsistent with HR {(h, w)} at ratio {ratio}")
    if h % hr_patch or w % hr_patch:
        raise ConfigError(f"extents {h}x{w} not divisible by patch size {hr_patch}")
    lp = hr_patch // ratio
    out = []
    for i in range(h // hr_patch):
        for j in range(w // hr_patch):
            ys, xs = slice(i * hr_patch, (i + 1) * hr_patch), slice(j * hr_patch, (j + 1) * hr_patch)
            out.append((hr[:, ys, xs].copy(), pan[ys, xs].copy(),
                        lr[:, i * lp:(i + 1) * lp, j * lp:(j + 1) * lp].copy()))
    return out


def patch_grid(h: int, w: int, hr_patch: int) -> Tuple[int, int]:
    return h // hr_patch, w // hr_patch


def split_rows(patches: Sequence[PatchTriple], grid_rows: int, train_fraction: float = 0.8):
    """Split a row-major patch list into (train, test) on whole patch rows."""
    n = len(patches)
    if grid_rows < 1 or n % grid_rows:
        raise ConfigError(f"{n} patches cannot form {grid_rows} rows")
    per_row = n // grid_rows
    train_rows = int(round(train_fraction * grid_rows))
    if grid_rows > 1:
        train_rows = min(max(train_rows, 1), grid_rows - 1)
    cut = train_rows * per_row
    return list(patches[:cut]), list(patches[cut:])
