"""The ``EZRC`` tensor container shared by encoder and CF checkpoints.

Layout (all integers little-endian)::

    b"EZRC" | u32 version=1 | u32 len(config) | config JSON (UTF-8)
    u32 tensor count
    per tensor: u16 len(name) | name (UTF-8) | u8 rank | u32 dims[rank] | u8 dtype | raw data

Only dtype 0 (float32 little-endian) is defined.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, BinaryIO, Mapping

import numpy as np

MAGIC = b"EZRC"
VERSION = 1
DTYPE_F32 = 0


class ContainerError(ValueError):
    pass


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ContainerError("truncated checkpoint")
    return buf


def write_container(path: str | Path, config: Mapping[str, Any], tensors: Mapping[str, np.ndarray]) -> None:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(struct.pack("<B", DTYPE_F32))
            fh.write(arr.tobytes())


def read_container(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise ContainerError(f"{path}: bad magic")
        version, cfg_len = struct.unpack("<II", _read_exact(fh, 8))
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported version {version}")
        config = json.loads(_read_exact(fh, cfg_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            (dtype,) = struct.unpack("<B", _read_exact(fh, 1))
            if dtype != DTYPE_F32:
                raise ContainerError(f"{path}: tensor {name!r} has unknown dtype code {dtype}")
            n = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float32)
        if fh.read(1):
            raise ContainerError(f"{path}: trailing bytes")
    return config, tensors
