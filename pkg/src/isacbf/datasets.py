"""Binary dataset files: fixed header followed by row-major float64 rows."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"ISDS"
VERSION = 1
# magic, version, rows, cols, config hash, tag, aux (angle samples for recon sets)
_HEADER = struct.Struct("<4sIQQ16s16sI")


@dataclass
class DatasetHeader:
    rows: int
    cols: int
    config_hash: str
    tag: str
    aux: int = 0


def write_dataset(path, data: np.ndarray, config_hash: str, tag: str, aux: int = 0):
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim != 2:
        raise ValueError("dataset must be 2-D")
    head = _HEADER.pack(MAGIC, VERSION, data.shape[0], data.shape[1],
                        config_hash.encode()[:16].ljust(16, b"\0"),
                        tag.encode()[:16].ljust(16, b"\0"), aux)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(data.tobytes())


def read_dataset(path) -> tuple[np.ndarray, DatasetHeader]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated dataset header")
    magic, version, rows, cols, chash, tag, aux = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != rows * cols:
        raise ValueError(f"{path}: expected {rows}x{cols} values, found {body.size}")
    header = DatasetHeader(rows, cols, chash.rstrip(b"\0").decode(), tag.rstrip(b"\0").decode(), aux)
    return body.reshape(rows, cols).astype(float), header
