"""Single-file model checkpoints.

Layout (all integers little-endian)::

    b"PGNETCKPT\\x00"                       magic, 10 bytes
    u32 n, n bytes of UTF-8 JSON            {"schema": 1, "config": {...}, "meta": {...}}
    u32 count                               number of blobs
    per blob: u16 len + UTF-8 name, u8 ndim, ndim x u32 extents, float32 payload

Blobs hold model parameters and buffers in registration order, followed by
optional optimizer moments named ``adam.m.<param>`` / ``adam.v.<param>``.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import FormatError

MAGIC = b"PGNETCKPT\x00"
SCHEMA = 1


def write_blobs(path, header: Dict, blobs: "OrderedDict[str, np.ndarray]") -> None:
    body = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(body)), body, struct.pack("<I", len(blobs))]
    for name, arr in blobs.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


def read_blobs(path) -> Tuple[Dict, "OrderedDict[str, np.ndarray]"]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (n,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    if header.get("schema") != SCHEMA:
        raise FormatError(f"{path}: unsupported schema {header.get('schema')!r}")
    (count,) = struct.unpack("<I", take(4))
    blobs = OrderedDict()
    for _ in range(count):
        (ln,) = struct.unpack("<H", take(2))
        name = take(ln).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return header, blobs


def save_checkpoint(path, model, meta: Optional[Dict] = None, optimizer=None) -> None:
    blobs = OrderedDict(model.state_dict())
    meta = dict(meta or {})
    if optimizer is not None:
        meta["adam_step"] = optimizer.step_count
        for name, arr in optimizer.m.items():
            blobs[f"adam.m.{name}"] = arr
        for name, arr in optimizer.v.items():
            blobs[f"adam.v.{name}"] = arr
    write_blobs(path, {"schema": SCHEMA, "config": model.cfg.to_dict(), "meta": meta}, blobs)


def load_checkpoint(path, optimizer=None):
    """Rebuild the model from a checkpoint; returns (model, meta).

    When ``optimizer`` is given, its moments and step counter are restored.
    """
    from .model import Pgnet, PgnetConfig

    header, blobs = read_blobs(path)
    model = Pgnet(PgnetConfig.from_dict(header["config"]))
    own = model.state_dict()
    model.load_state_dict({k: blobs[k] for k in own if k in blobs} if set(own) <= set(blobs) else blobs)
    meta = header.get("meta", {})
    if optimizer is not None:
        optimizer.step_count = int(meta.get("adam_step", 0))
        optimizer.m = OrderedDict((k[len("adam.m."):], v.copy()) for k, v in blobs.items() if k.startswith("adam.m."))
        optimizer.v = OrderedDict((k[len("adam.v."):], v.copy()) for k, v in blobs.items() if k.startswith("adam.v."))
    return model, meta
