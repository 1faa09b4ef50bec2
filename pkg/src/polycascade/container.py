"""
Versioned binary container for fitted models.

Layout (little-endian)::

    magic        4 bytes   b"PCGM" (GCN) or b"PCTE" (tree ensemble)
    version      u32
    meta_len     u32
    meta         JSON, utf-8; includes the array table (name, dtype, shape, offset)
    data_len     u64
    data         concatenated raw array bytes
    digest       32 bytes  SHA-256 over everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

SCHEMA_VERSION = 1


class ModelFormatError(ValueError):
    """File is not a readable model container (magic, version, size or digest)."""


class UnsupportedVersionError(ModelFormatError):
    pass


def dump(path, magic: bytes, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    table = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        if a.dtype.byteorder == ">":
            a = a.astype(a.dtype.newbyteorder("<"))
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    meta_bytes = json.dumps({"meta": dict(meta), "arrays": table}, sort_keys=True).encode()
    data = b"".join(chunks)
    body = (
        magic
        + struct.pack("<II", SCHEMA_VERSION, len(meta_bytes))
        + meta_bytes
        + struct.pack("<Q", len(data))
        + data
    )
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load(path, magic: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != magic:
        raise ModelFormatError(
            f"{path}: bad magic bytes {blob[:4]!r}, expected {magic!r} (schema v{SCHEMA_VERSION})"
        )
    if len(blob) < 12:
        raise ModelFormatError(f"{path}: truncated header")
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != SCHEMA_VERSION:
        raise UnsupportedVersionError(
            f"{path}: schema version {version} is not supported (this build reads v{SCHEMA_VERSION})"
        )
    pos = 12 + meta_len
    if len(blob) < pos + 8:
        raise ModelFormatError(f"{path}: truncated metadata")
    (data_len,) = struct.unpack_from("<Q", blob, pos)
    end = pos + 8 + data_len
    if len(blob) != end + 32:
        raise ModelFormatError(f"{path}: truncated or padded file ({len(blob)} bytes, expected {end + 32})")
    if hashlib.sha256(blob[:end]).digest() != blob[end:]:
        raise ModelFormatError(f"{path}: checksum mismatch")
    header = json.loads(blob[12:pos].decode())
    data = blob[pos + 8 : end]
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["meta"], arrays
