"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MCPT"  u32 version
    repeated sections:  u32 name_len, name (utf-8), u64 payload_len, payload

The section named ``meta`` holds UTF-8 JSON. Every other section is a tensor:
u32 ndim, ndim x u64 dims, then row-major float64 values.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MCPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def _tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8")  # keeps 0-d shapes, unlike ascontiguousarray
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def dumps(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    sections = [("meta", json.dumps(ckpt.meta, sort_keys=True).encode("utf-8"))]
    sections += [(name, _tensor_bytes(arr)) for name, arr in ckpt.tensors.items()]
    for name, payload in sections:
        raw = name.encode("utf-8")
        out += [struct.pack("<I", len(raw)), raw, struct.pack("<Q", len(payload)), payload]
    return b"".join(out)


def loads(blob: bytes, vocab_hash: str | None = None) -> Checkpoint:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    meta = None
    tensors: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (size,) = struct.unpack("<Q", take(8))
        payload = take(size)
        if name == "meta":
            meta = json.loads(payload.decode("utf-8"))
            continue
        if len(payload) < 4:
            raise CheckpointError(f"section {name!r}: truncated tensor header")
        (ndim,) = struct.unpack_from("<I", payload, 0)
        if len(payload) < 4 + 8 * ndim:
            raise CheckpointError(f"section {name!r}: truncated tensor header")
        shape = struct.unpack_from(f"<{ndim}Q", payload, 4)
        data = payload[4 + 8 * ndim:]
        if len(data) != 8 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"section {name!r}: size does not match shape {shape}")
        tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    if meta is None:
        raise CheckpointError("checkpoint has no meta section")
    stored = meta.get("vocab_hash") or ""
    if vocab_hash is not None and stored and stored != vocab_hash:
        raise CheckpointError("vocabulary hash mismatch: checkpoint was trained with a different vocabulary")
    return Checkpoint(meta, tensors)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load_checkpoint(path: str | Path, vocab_hash: str | None = None) -> Checkpoint:
    return loads(Path(path).read_bytes(), vocab_hash)
