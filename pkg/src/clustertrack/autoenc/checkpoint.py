"""Binary checkpoint format for trained models.

Layout: 4-byte magic ``CTAE``, uint32 version, uint32 header length, a JSON
header (config echo, parameter manifest, metadata such as the calibrated
embedding-distance threshold), then the raw float64 little-endian parameter
arrays concatenated in declaration order.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .model import AutoencoderConfig, AutoencoderParams

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = b"CTAE"
VERSION = 1


def save_checkpoint(path: str | Path, params: AutoencoderParams, meta: dict | None = None) -> None:
    cfg = params.config
    header = {
        "config": dataclasses.asdict(cfg),
        "params": [[name, list(arr.shape)] for name, arr in params.arrays.items()],
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for arr in params.arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[AutoencoderParams, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        cfg = AutoencoderConfig(**header["config"])
        arrays: dict[str, np.ndarray] = {}
        for name, shape in header["params"]:
            shape = tuple(shape)
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"truncated checkpoint while reading {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise ValueError("trailing bytes after parameter arrays")
    return AutoencoderParams(cfg, arrays), header["meta"]
