"""Versioned binary checkpoint: magic, version, JSON config, named f32 tensors."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .network import ModelConfig, Seq2SeqModel

MAGIC = b"SLTM"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(path: str | Path, model: Seq2SeqModel, meta: dict | None = None) -> None:
    """Write ``model`` as float32 tensors in sorted-name order.

    ``meta`` (run config, seed, step) is embedded next to the model config so
    the file alone documents how it was produced.
    """
    header = json.dumps({"model": model.cfg.to_json(), "meta": meta or {}}, sort_keys=True)
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(header), struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[Seq2SeqModel, dict]:
    raw = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        chunk = raw[off : off + n]
        off += n
        return chunk

    def take_u32():
        return struct.unpack("<I", take(4))[0]

    def take_str():
        return take(take_u32()).decode("utf-8")

    if take(4) != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version = take_u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(take_str())
    cfg = ModelConfig(**{**header["model"], "dtype": "float32"})
    params = {}
    for _ in range(take_u32()):
        name = take_str()
        ndim = take_u32()
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes")
    return Seq2SeqModel(cfg, params), header.get("meta", {})
