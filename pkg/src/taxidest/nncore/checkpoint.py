"""Versioned binary checkpoint container.

Layout:
    magic   8s  = b"TXDMODEL"
    version u32 little-endian = 1
    hlen    u64 little-endian
    header  hlen bytes of UTF-8 JSON (sorted keys)
    blobs   concatenated raw little-endian parameter buffers

The header's ``params`` list gives, per parameter and in blob order:
name, shape, dtype (numpy little-endian string, e.g. "<f4"), offset and
nbytes relative to the end of the header.  ``extras`` carries whatever
JSON-serializable metadata makes a model self-contained (configuration,
standardization stats, vocabulary, cluster centers).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .engine import Parameter

__all__ = ["load_checkpoint", "save_checkpoint"]

_MAGIC = b"TXDMODEL"
_VERSION = 1


def save_checkpoint(path, params: list[Parameter], extras: dict) -> None:
    entries = []
    offset = 0
    for p in params:
        arr = p.value
        dtype = arr.dtype.newbyteorder("<")
        nbytes = arr.size * dtype.itemsize
        entries.append(
            {
                "name": p.name,
                "shape": list(arr.shape),
                "dtype": dtype.str,
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    header = json.dumps(
        {"extras": extras, "params": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", _VERSION, len(header)))
        f.write(header)
        for p in params:
            f.write(np.ascontiguousarray(p.value, dtype=p.value.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (extras, {parameter name: value array})."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        version, hlen = struct.unpack("<IQ", f.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        blob = f.read()
    values = {}
    for e in header["params"]:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        values[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return header["extras"], values
