"""Full-reference quality indices for fused cubes of shape (bands, H, W).

Conventions: reflectance peak 1.0; SSIM uses an 11x11 Gaussian window
(sigma 1.5, valid positions only) with K1=0.01, K2=0.03; SCC high-passes
each band with the 4-neighbour Laplacian under reflect padding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

PEAK = 1.0
PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
EPS = 1e-12
LAPLACIAN = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], dtype=np.float64)
METRIC_NAMES = ("psnr", "ssim", "sam", "ergas", "scc")


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise DimensionError(f"pred {pred.shape} and ref {ref.shape} differ")
    if pred.ndim == 2:
        pred, ref = pred[None], ref[None]
    if pred.ndim != 3:
        raise DimensionError(f"expected (bands, H, W), got {pred.shape}")
    return pred, ref


def psnr(pred, ref, peak: float = PEAK) -> float:
    """Band-averaged PSNR in dB; each band is capped at 100 dB."""
    pred, ref = _pair(pred, ref)
    mse = ((pred - ref) ** 2).mean(axis=(1, 2))
    with np.errstate(divide="ignore"):
        vals = np.where(mse > 0, 10.0 * np.log10(peak * peak / np.where(mse > 0, mse, 1.0)), PSNR_CAP)
    return float(np.minimum(vals, PSNR_CAP).mean())


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-t * t / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    return np.einsum("...ijkl,kl->...ij", sliding_window_view(img, (k, k), axis=(-2, -1)), win)


def ssim(pred, ref, peak: float = PEAK) -> float:
    """Mean SSIM over valid window positions, averaged over bands.

    Images smaller than the window use the largest odd window that fits.
    """
    pred, ref = _pair(pred, ref)
    size = min(SSIM_WINDOW, *pred.shape[1:])
    size -= (size + 1) % 2
    win = gaussian_window(size, SSIM_SIGMA)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mx, my = _filter_valid(pred, win), _filter_valid(ref, win)
    sxx = _filter_valid(pred * pred, win) - mx * mx
    syy = _filter_valid(ref * ref, win) - my * my
    sxy = _filter_valid(pred * ref, win) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean(axis=(1, 2)).mean())


def sam(pred, ref, eps: float = 1e-8) -> float:
    """Mean spectral angle (radians) over pixels."""
    pred, ref = _pair(pred, ref)
    nx = np.maximum(np.sqrt((pred ** 2).sum(axis=0)), eps)
    ny = np.maximum(np.sqrt((ref ** 2).sum(axis=0)), eps)
    u, v = pred / nx, ref / ny
    theta = 2.0 * np.arctan2(np.sqrt(((u - v) ** 2).sum(axis=0)), np.sqrt(((u + v) ** 2).sum(axis=0)))
    return float(theta.mean())


def ergas(pred, ref, ratio: float) -> float:
    """100/ratio * sqrt(mean_b RMSE_b^2 / mean(ref_b)^2)."""
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    pred, ref = _pair(pred, ref)
    mse = ((pred - ref) ** 2).mean(axis=(1, 2))
    mu = ref.mean(axis=(1, 2))
    return float(100.0 / ratio * np.sqrt(np.mean(mse / np.maximum(mu * mu, EPS))))


def laplacian(img: np.ndarray) -> np.ndarray:
    """4-neighbour Laplacian of the last two axes with reflect padding."""
    pad = [(0, 0)] * (img.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(img, pad, mode="reflect")
    return (4 * p[..., 1:-1, 1:-1] - p[..., :-2, 1:-1] - p[..., 2:, 1:-1]
            - p[..., 1:-1, :-2] - p[..., 1:-1, 2:])


def scc(pred, ref) -> float:
    """Band-averaged Pearson correlation of Laplacian-filtered bands."""
    pred, ref = _pair(pred, ref)
    hp, hr = laplacian(pred), laplacian(ref)
    vals = []
    for a, b in zip(hp, hr):
        a = a - a.mean()
        b = b - b.mean()
        den = np.sqrt((a * a).sum() * (b * b).sum())
        if den > EPS:
            vals.append(float((a * b).sum() / den))
        else:
            # flat high-pass on at least one side
            vals.append(1.0 if np.allclose(a, b, atol=1e-12) else 0.0)
    return float(np.clip(np.mean(vals), -1.0, 1.0))


def all_metrics(pred, ref, ratio: float) -> Dict[str, float]:
    return {"psnr": psnr(pred, ref), "ssim": ssim(pred, ref), "sam": sam(pred, ref),
            "ergas": ergas(pred, ref, ratio), "scc": scc(pred, ref)}


@dataclass
class MetricsReport:
    rows: List[Dict] = field(default_factory=list)

    def add(self, scene: str, values: Dict[str, float]) -> None:
        self.rows.append({"scene": scene, **{k: float(values[k]) for k in METRIC_NAMES}})

    @property
    def mean(self) -> Dict[str, float]:
        if not self.rows:
            return {k: float("nan") for k in METRIC_NAMES}
        return {k: float(np.mean([r[k] for r in self.rows])) for k in METRIC_NAMES}

    def __getitem__(self, key: str) -> float:
        return self.mean[key]

    def to_csv(self, path, include_mean: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("scene",) + METRIC_NAMES)
            for r in self.rows:
                w.writerow([r["scene"]] + [f"{r[k]:.9g}" for k in METRIC_NAMES])
            if include_mean and self.rows:
                m = self.mean
                w.writerow(["mean"] + [f"{m[k]:.9g}" for k in METRIC_NAMES])

    @staticmethod
    def format_row(values: Dict[str, float]) -> str:
        return ",".join(f"{k}={_short(values[k])}" for k in METRIC_NAMES)


def _short(v: float) -> str:
    r = round(float(v), 6)
    return repr(r + 0.0)


def evaluate_pairs(preds: Sequence[np.ndarray], refs: Sequence[np.ndarray], ratio: float,
                   names: Sequence[str] = None) -> MetricsReport:
    rep = MetricsReport()
    for i, (p, r) in enumerate(zip(preds, refs)):
        rep.add(names[i] if names else f"patch{i:04d}", all_metrics(p, r, ratio))
    return rep
