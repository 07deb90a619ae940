"""Flat-array checkpoint files with a readable text header.

Layout: a magic line, one JSON line describing the payload (kind, metadata,
array names/shapes/dtypes), then the raw array bytes concatenated in header
order. Writes are byte-deterministic for identical inputs.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

MAGIC = "afalab-checkpoint v1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str, kind: str, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(np.ascontiguousarray(arr).tobytes())
    header = {"kind": kind, "meta": meta or {}, "arrays": entries}
    with open(path, "wb") as fh:
        fh.write(MAGIC.encode() + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str) -> tuple[str, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n").decode()
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (magic {magic!r})")
        header = json.loads(fh.readline().decode())
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return header["kind"], arrays, header["meta"]


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
