"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic b"LFNCKPT1"
    u32       format version
    u64       header length in bytes
    header    UTF-8 JSON: config snapshot, step, rng state and a tensor table
              [{"name", "shape", "offset", "nbytes"}], offsets relative to payload start
    payload   contiguous little-endian float32 arrays in table order

Tensor names are prefixed ``param/``, ``adam_m/`` and ``adam_v/``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LFNCKPT1"
VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    config: dict
    step: int
    rng_state: dict
    params: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    version: int = VERSION

    def tensor_table(self):
        items = [(f"param/{n}", a) for n, a in self.params.items()]
        items += [(f"adam_m/{n}", a) for n, a in self.adam_m.items()]
        items += [(f"adam_v/{n}", a) for n, a in self.adam_v.items()]
        return items


def to_bytes(ckpt):
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.tensor_table():
        buf = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    header = {
        "config": ckpt.config,
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "tensors": table,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", ckpt.version, len(blob)) + blob + b"".join(chunks)


def from_bytes(data, source="<bytes>"):
    if data[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    if len(data) < 20:
        raise CheckpointError(f"{source}: truncated header")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header: {exc}") from None
    payload = memoryview(data)[20 + hlen:]
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise CheckpointError(f"{source}: payload truncated at tensor {entry['name']}")
        arr = np.frombuffer(payload[start:start + n], dtype=_DTYPE).reshape(entry["shape"]).copy()
        kind, name = entry["name"].split("/", 1)
        groups[kind][name] = arr.astype(np.float32)
    return Checkpoint(
        config=header["config"],
        step=header["step"],
        rng_state=header["rng_state"],
        params=groups["param"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        version=version,
    )


def save_checkpoint(path, ckpt):
    """Write atomically so an interrupted save never clobbers the previous file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint: {path}") from None
    return from_bytes(data, str(path))
