"""Binary checkpoint format.

Layout (little endian)::

    b"PMN1" | version u16 | json_len u32 | json (UTF-8)
    then for each tensor until EOF:
    name_len u16 | name (UTF-8) | rank u16 | dims u32 * rank | payload f32

The JSON block holds the run config, the model config, the epoch counter and
the Adam step count. Adam moments, when saved, are tensors named
``adam.m.<param>`` / ``adam.v.<param>``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, VersionError
from .model import ModelConfig, PMNModel
from .nn import Adam
from .tensor import Rng

MAGIC = b"PMN1"
VERSION = 1


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<H", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, model: PMNModel, run_config: dict | None = None, epoch: int = 0,
                    adam: Adam | None = None) -> None:
    meta = {
        "format_version": VERSION,
        "run_config": run_config or {},
        "model_config": model.config.to_dict(),
        "epoch": int(epoch),
        "adam_step": adam.step_count if adam is not None else None,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob]
    for name, arr in model.state().items():
        parts.append(_pack_tensor(name, arr))
    if adam is not None:
        for name in adam.params:
            parts.append(_pack_tensor(f"adam.m.{name}", adam.m[name]))
            parts.append(_pack_tensor(f"adam.v.{name}", adam.v[name]))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version, jlen = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    off = 10
    meta = json.loads(raw[off:off + jlen].decode("utf-8"))
    off += jlen
    tensors: dict[str, np.ndarray] = {}
    while off < len(raw):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<H", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        if off + 4 * count > len(raw):
            raise DataError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape).copy()
        off += 4 * count
    return meta, tensors


def load_checkpoint(path, with_optimizer: bool = False):
    """Rebuild the model; returns ``(model, meta)`` or ``(model, meta, adam)``."""
    meta, tensors = read_checkpoint(path)
    cfg = dict(meta["model_config"])
    cfg["channels"] = tuple(cfg["channels"])
    model = PMNModel(ModelConfig(**cfg), Rng(0))
    try:
        model.load_state(tensors)
    except (KeyError, ValueError) as exc:
        raise VersionError(f"{path}: checkpoint does not match its model config ({exc})") from exc
    if not with_optimizer:
        return model, meta
    rc = meta.get("run_config") or {}
    adam = Adam(model.parameters(), lr=rc.get("lr", 1e-3), decay=rc.get("lr_decay", 0.99))
    if meta.get("adam_step") is not None:
        adam.step_count = meta["adam_step"]
        for name in adam.params:
            adam.m[name][...] = tensors[f"adam.m.{name}"]
            adam.v[name][...] = tensors[f"adam.v.{name}"]
    return model, meta, adam
