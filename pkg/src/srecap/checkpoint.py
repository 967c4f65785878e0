"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SRECKPT1"                      magic, 8 bytes
    u32 version
    u32 n, then n bytes of UTF-8 JSON  (config, vocabulary, counters)
    u32 tensor count
    per tensor: u32 name length, name bytes, u32 rank, rank x u64 dims,
                float64 values in row-major order
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamState
from .concepts import ConceptVocabulary
from .config import TrainConfig

MAGIC = b"SRECKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: ConceptVocabulary
    params: dict[str, np.ndarray]
    optimizer: AdamState = field(default_factory=AdamState)
    epoch: int = 0

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v for k, v in self.params.items()}
        out.update({f"adam.m/{k}": v for k, v in self.optimizer.m.items()})
        out.update({f"adam.v/{k}": v for k, v in self.optimizer.v.items()})
        return out

    def meta(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "vocab": self.vocab.to_dict(),
            "epoch": self.epoch,
            "adam_step": self.optimizer.step,
        }


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps(ckpt.meta(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [struct.pack("<I", len(meta)), meta]
    tensors = ckpt.tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", n) for n in arr.shape]
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:8] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic: found {buf[:8]!r}, expected {MAGIC!r}")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals[0]

    version = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version: found {version}, expected {VERSION}")
    n = take("<I")
    meta = json.loads(buf[pos : pos + n].decode("utf-8"))
    pos += n
    tensors: dict[str, np.ndarray] = {}
    count_tensors = take("<I")
    for _ in range(count_tensors):
        length = take("<I")
        name = buf[pos : pos + length].decode("utf-8")
        pos += length
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        rank = take("<I")
        dims = tuple(take("<Q") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        if pos + 8 * count > len(buf):
            raise CheckpointError("truncated checkpoint")
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * count
    if pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint")
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param/")}
    opt = AdamState(
        step=meta["adam_step"],
        m={k[7:]: v for k, v in tensors.items() if k.startswith("adam.m/")},
        v={k[7:]: v for k, v in tensors.items() if k.startswith("adam.v/")},
    )
    return Checkpoint(
        TrainConfig.from_dict(meta["config"]), ConceptVocabulary.from_dict(meta["vocab"]),
        params, opt, meta["epoch"],
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
