"""Binary checkpoints.

Layout (all integers little-endian)::

    b"PMX1" | u16 version | u32 n + config JSON (UTF-8)
    | u32 count + tensors            (model parameters and buffers)
    | u32 count + tensors            (optimizer buffers)
    | u32 epoch | u32 n + RNG state JSON | u32 CRC32

A tensor is ``u16 n + name | u8 ndim | u32 dims... | float32 data``. The CRC
covers every byte between the magic and the checksum. Serialisation is
canonical, so load followed by save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.io import atomic_write_bytes

MAGIC = b"PMX1"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for any malformed, corrupted or mismatched checkpoint."""


@dataclass
class Checkpoint:
    config: dict
    model_state: "OrderedDict[str, np.ndarray]"
    optimizer_state: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _pack_tensors(tensors) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4", order="C")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = _json_bytes(ckpt.config)
    rng = _json_bytes(ckpt.rng_state)
    payload = b"".join([
        struct.pack("<H", VERSION),
        struct.pack("<I", len(cfg)), cfg,
        _pack_tensors(ckpt.model_state),
        _pack_tensors(ckpt.optimizer_state),
        struct.pack("<I", ckpt.epoch),
        struct.pack("<I", len(rng)), rng,
    ])
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint (wanted {n} bytes at offset {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def json(self):
        (n,) = self.unpack("<I")
        try:
            return json.loads(self.take(n).decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise CheckpointError(f"bad JSON block: {exc}") from None

    def tensors(self) -> "OrderedDict[str, np.ndarray]":
        (count,) = self.unpack("<I")
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(count):
            (n,) = self.unpack("<H")
            try:
                name = self.take(n).decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointError("tensor name is not UTF-8") from None
            (ndim,) = self.unpack("<B")
            shape = self.unpack(f"<{ndim}I")
            size = math.prod(shape)   # python ints: hostile dims cannot wrap
            data = self.take(4 * size)
            if name in out:
                raise CheckpointError(f"duplicate tensor {name!r}")
            try:
                out[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
            except ValueError as exc:
                raise CheckpointError(f"tensor {name!r}: {exc}") from None
        return out


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointError(f"{source}: bad magic")
    if len(buf) < 4 + 2 + 4:
        raise CheckpointError(f"{source}: truncated checkpoint")
    payload, crc = buf[4:-4], buf[-4:]
    if zlib.crc32(payload) != struct.unpack("<I", crc)[0]:
        raise CheckpointError(f"{source}: CRC mismatch")
    r = _Reader(payload)
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")
    config = r.json()
    model_state = r.tensors()
    opt_state = r.tensors()
    (epoch,) = r.unpack("<I")
    rng_state = r.json()
    if r.pos != len(payload):
        raise CheckpointError(f"{source}: {len(payload) - r.pos} trailing bytes")
    if not isinstance(config, dict) or not isinstance(rng_state, dict):
        raise CheckpointError(f"{source}: config and RNG state must be JSON objects")
    return Checkpoint(config, model_state, opt_state, epoch, rng_state)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))
