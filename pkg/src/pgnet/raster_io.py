"""Cube files (JSON sidecar + raw little-endian float32 payload), PPM
quicklooks and PGM error maps."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, FormatError

DTYPE = "f32le"
DEFAULT_RGB_BANDS = (20, 40, 60)
ERROR_MAP_RANGE = (0.0, 0.05)


def cube_paths(path) -> Tuple[Path, Path]:
    """(sidecar, payload) for a basename; '.json'/'.f32' suffixes are stripped."""
    p = Path(path)
    if p.suffix in (".json", ".f32"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".f32")


def write_cube(cube: np.ndarray, path, wavelengths: Optional[Sequence[float]] = None) -> None:
    cube = np.asarray(cube)
    if cube.ndim == 2:
        cube = cube[None]
    if cube.ndim != 3:
        raise DimensionError(f"cube must be (bands, H, W), got {cube.shape}")
    b, h, w = cube.shape
    meta = {"bands": b, "height": h, "width": w, "dtype": DTYPE}
    if wavelengths is not None:
        wl = [float(v) for v in wavelengths]
        if len(wl) != b:
            raise DimensionError(f"{len(wl)} wavelengths for {b} bands")
        meta["wavelengths"] = wl
    side, payload = cube_paths(path)
    side.parent.mkdir(parents=True, exist_ok=True)
    side.write_text(json.dumps(meta, indent=1) + "\n")
    payload.write_bytes(np.ascontiguousarray(cube, dtype="<f4").tobytes())


def read_cube_meta(path) -> dict:
    side, _ = cube_paths(path)
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: malformed JSON ({exc})") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{side}: sidecar must be a JSON object")
    for key in ("bands", "height", "width", "dtype"):
        if key not in meta:
            raise FormatError(f"{side}: missing '{key}'")
    if meta["dtype"] != DTYPE:
        raise FormatError(f"{side}: unsupported dtype {meta['dtype']!r} (only {DTYPE!r})")
    for key in ("bands", "height", "width"):
        if not isinstance(meta[key], int) or meta[key] < 1:
            raise FormatError(f"{side}: '{key}' must be a positive integer")
    return meta


def read_cube(path, with_meta: bool = False):
    """Load a (bands, H, W) float32 cube; optionally also return the sidecar dict."""
    meta = read_cube_meta(path)
    _, payload = cube_paths(path)
    raw = payload.read_bytes()
    b, h, w = meta["bands"], meta["height"], meta["width"]
    expected = 4 * b * h * w
    if len(raw) != expected:
        raise FormatError(f"{payload}: payload length mismatch, expected {expected} bytes, got {len(raw)}")
    cube = np.frombuffer(raw, dtype="<f4").reshape(b, h, w).astype(np.float32)
    return (cube, meta) if with_meta else cube


def _stretch(band: np.ndarray) -> np.ndarray:
    lo, hi = np.percentile(band, [1, 99])
    if hi - lo <= 0:
        return np.full(band.shape, 128, dtype=np.uint8)
    return np.round(np.clip((band - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)


def write_quicklook(cube: np.ndarray, band_indices: Sequence[int], path) -> None:
    """Binary PPM (P6) from three 0-based bands, each 1-99 percentile stretched."""
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3:
        raise DimensionError(f"cube must be (bands, H, W), got {cube.shape}")
    idx = list(band_indices)
    if len(idx) != 3:
        raise DimensionError("quicklook needs exactly three band indices")
    for i in idx:
        if not 0 <= i < cube.shape[0]:
            raise IndexError(f"band index {i} out of range for {cube.shape[0]} bands")
    rgb = np.stack([_stretch(cube[i]) for i in idx], axis=-1)
    h, w = cube.shape[1:]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def default_bands(bands: int) -> Tuple[int, int, int]:
    """The 20/40/60 triple when it fits, else three evenly spaced bands."""
    if bands > max(DEFAULT_RGB_BANDS):
        return DEFAULT_RGB_BANDS
    return tuple(int(round(v)) for v in np.linspace(0, bands - 1, 5)[1:4])


def write_error_map(pred: np.ndarray, ref: np.ndarray, path) -> None:
    """Grayscale PGM (P5) of band-mean absolute error on a fixed 0-0.05 scale."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape or pred.ndim != 3:
        raise DimensionError(f"pred {pred.shape} and ref {ref.shape} must be equal (bands, H, W)")
    err = np.abs(pred - ref).mean(axis=0)
    lo, hi = ERROR_MAP_RANGE
    img = np.round(np.clip((err - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)
    h, w = err.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary P5/P6 file written by this module."""
    data = Path(path).read_bytes()
    m = re.match(rb"(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM/PPM")
    w, h = int(m.group(2)), int(m.group(3))
    ch = 3 if m.group(1) == b"P6" else 1
    pix = np.frombuffer(data[m.end():m.end() + w * h * ch], dtype=np.uint8)
    return pix.reshape(h, w, ch) if ch == 3 else pix.reshape(h, w)
