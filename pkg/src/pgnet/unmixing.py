"""Linear mixing model utilities and the abundance-STD / PAN-intensity
("fish") scatter experiment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .errors import ConfigError, DimensionError

DEFAULT_ENDMEMBERS = 11
DEFAULT_PIXELS = 5000


def lmm_mix(e: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Noiseless mixture X = E A for E (b, c) and A (c, n)."""
    e = np.asarray(e, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if e.ndim != 2 or a.ndim != 2 or e.shape[1] != a.shape[0]:
        raise DimensionError(f"cannot mix endmembers {e.shape} with abundances {a.shape}")
    return e @ a


def effective_srf(s, e: np.ndarray) -> np.ndarray:
    """SRF seen by the abundances: S' = S E, length c."""
    s = np.asarray(s, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if s.ndim != 1 or e.ndim != 2 or s.shape[0] != e.shape[0]:
        raise DimensionError(f"SRF of length {s.shape} does not fit endmembers {e.shape}")
    return s @ e


def sample_abundance(n: int, c: int, seed: int) -> np.ndarray:
    """Uniform[0, 1] fractions, each pixel (column) rescaled to sum to one."""
    if n < 1 or c < 2:
        raise ConfigError(f"need n >= 1 and c >= 2, got n={n}, c={c}")
    a = np.random.default_rng(seed).uniform(0.0, 1.0, size=(c, n))
    return a / a.sum(axis=0, keepdims=True)


def abundance_std(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Per-pixel population STD across the endmember axis."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[axis] < 2:
        raise ConfigError("abundance STD needs at least two components")
    return a.std(axis=axis)


def synthetic_wavelengths(bands: int, lo: float = 0.4, hi: float = 2.5) -> np.ndarray:
    return np.linspace(lo, hi, bands)


def synthetic_endmembers(bands: int, c: int, seed: int, wavelengths: Optional[np.ndarray] = None) -> np.ndarray:
    """Smooth random spectra (sums of 3-6 Gaussians in wavelength), clipped to [0, 1].

    Returns a (bands, c) matrix.
    """
    if wavelengths is None:
        wavelengths = synthetic_wavelengths(bands)
    wl = np.asarray(wavelengths, dtype=np.float64)
    lo, hi = wl.min(), wl.max()
    span = max(hi - lo, 1e-6)
    rng = np.random.default_rng(seed)
    e = np.zeros((bands, c))
    for j in range(c):
        base = rng.uniform(0.02, 0.3)
        curve = np.full(bands, base)
        for _ in range(rng.integers(3, 7)):
            centre = rng.uniform(lo, hi)
            width = rng.uniform(0.05, 0.3) * span
            height = rng.uniform(-0.25, 0.7)
            curve += height * np.exp(-0.5 * ((wl - centre) / width) ** 2)
        e[:, j] = np.clip(curve, 0.0, 1.0)
    return e


@dataclass
class FishScatter:
    astd: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.astd = np.asarray(self.astd, dtype=np.float64).reshape(-1)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if self.astd.shape != self.intensity.shape:
            raise DimensionError("astd and intensity must have equal length")

    def __len__(self):
        return self.astd.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("astd,intensity\n")
            for a, i in zip(self.astd, self.intensity):
                fh.write(f"{a:.9g},{i:.9g}\n")

    @classmethod
    def from_csv(cls, path) -> "FishScatter":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def fish_scatter(e: np.ndarray, s, n: int = DEFAULT_PIXELS, seed: int = 0) -> FishScatter:
    """Sample sum-to-one abundances, mix, synthesize PAN, pair ASTD with intensity."""
    e = np.asarray(e, dtype=np.float64)
    a = sample_abundance(n, e.shape[1], seed)
    x = lmm_mix(e, a)
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (x.shape[0],):
        raise DimensionError(f"SRF length {s.size} != bands {x.shape[0]}")
    return FishScatter(abundance_std(a), s @ x)


def decile_spreads(scatter: FishScatter, bins: int = 10) -> np.ndarray:
    """Intensity STD within each ASTD decile, lowest ASTD first."""
    order = np.argsort(scatter.astd, kind="stable")
    return np.array([scatter.intensity[idx].std() for idx in np.array_split(order, bins)])


def fish_summary(scatter: FishScatter, head_oracle: Optional[float] = None,
                 head_ratio: float = 0.3, max_inversions: int = 1) -> Dict:
    """Sharp-head / disperse-tail diagnostics of a scatter.

    ``head_oracle`` is the intensity expected for fully mixed pixels,
    S' . (1/c) 1, when it is known.
    """
    order = np.argsort(scatter.astd, kind="stable")
    deciles = np.array_split(order, 10)
    spreads = np.array([scatter.intensity[idx].std() for idx in deciles])
    head = scatter.intensity[deciles[0]]
    inversions = int(np.sum(np.diff(spreads) < 0))
    sharp = bool(spreads[0] < head_ratio * spreads[-1])
    out = {
        "pixels": int(len(scatter)),
        "decile_spread": [float(v) for v in spreads],
        "head_mean": float(head.mean()),
        "head_spread": float(spreads[0]),
        "tail_spread": float(spreads[-1]),
        "sharp_head": sharp,
        "inversions": inversions,
        "monotone_spread": inversions <= max_inversions,
    }
    if head_oracle is not None:
        out["head_oracle"] = float(head_oracle)
        out["head_matches_oracle"] = bool(abs(head.mean() - head_oracle) <= spreads[0])
    out["passed"] = bool(sharp and out["monotone_spread"] and out.get("head_matches_oracle", True))
    return out
