"""Binary container: JSON header plus named little-endian float32 tensors.

Shared by verifier checkpoints, baseline model snapshots, and token
embedding files. Layout: 8-byte magic, u32 header length, header JSON
(format version, kind, payload metadata, tensor index), then raw tensor
bytes in index order.
"""
from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointTruncatedError, CheckpointVersionError

MAGIC = b"RPRMBIN1"
FORMAT_VERSION = 1


def write_container(path, header: dict, tensors: Mapping[str, np.ndarray]) -> None:
    index = [{"name": name, "shape": list(array.shape)} for name, array in tensors.items()]
    full_header = dict(header)
    full_header["format_version"] = FORMAT_VERSION
    full_header["tensors"] = index
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack("<I", len(header_bytes)))
    buffer.write(header_bytes)
    for array in tensors.values():
        buffer.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buffer.getvalue())
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as handle:
        magic = handle.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointVersionError(f"bad container magic {magic!r}")
        raw_len = handle.read(4)
        if len(raw_len) < 4:
            raise CheckpointTruncatedError("header length missing")
        (header_len,) = struct.unpack("<I", raw_len)
        header_bytes = handle.read(header_len)
        if len(header_bytes) < header_len:
            raise CheckpointTruncatedError("header truncated")
        header = json.loads(header_bytes)
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"unsupported container version {header.get('format_version')!r}"
            )
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = handle.read(4 * count)
            if len(data) < 4 * count:
                raise CheckpointTruncatedError(f"tensor {entry['name']!r} truncated")
            tensors[entry["name"]] = np.frombuffer(data, dtype="<f4").reshape(shape)
    return header, tensors
