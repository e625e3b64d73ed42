"""Flat binary parameter checkpoints.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"CNETCKPT"
    8       4     format version (uint32, currently 1)
    12      8     header length H in bytes (uint64)
    20      H     UTF-8 JSON header
    20+H    pad   zero bytes up to the next multiple of 16
    D       ...   raw tensor data

The header is ``{"tensors": [{"name", "shape", "dtype", "offset", "nbytes"}],
"meta": {...}}``. ``offset`` is relative to D; ``dtype`` is a numpy dtype
string with explicit little-endian byte order (``"<f4"``, ``"<f8"``).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CNETCKPT"
VERSION = 1
_ALIGN = 16


class CheckpointError(ValueError):
    pass


def save(path, tensors: dict, meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = np.ascontiguousarray(le).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        pad = -len(data) % _ALIGN
        blobs.append(b"\0" * pad)
        offset += len(data) + pad
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    head = MAGIC + struct.pack("<IQ", VERSION, len(header)) + header
    head += b"\0" * (-len(head) % _ALIGN)
    Path(path).write_bytes(head + b"".join(blobs))


def load(path) -> tuple[dict, dict]:
    """Return ``(tensors, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen].decode())
    start = 20 + hlen
    start += -start % _ALIGN
    tensors = {}
    for e in header["tensors"]:
        lo = start + e["offset"]
        buf = raw[lo : lo + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return tensors, header.get("meta", {})
