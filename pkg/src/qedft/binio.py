"""Binary array dumps: magic, JSON header length, JSON header, raw array bytes."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"QEDFTARR"
VERSION = 1


def write_array(path, array, header: dict | None = None) -> Path:
    """Atomically write ``array`` with a JSON ``header`` to ``path``."""
    path = Path(path)
    array = np.ascontiguousarray(array)
    meta = dict(header or {})
    meta.update({"format_version": VERSION, "dtype": array.dtype.str, "shape": list(array.shape)})
    blob = json.dumps(meta, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(array.tobytes())
    os.replace(tmp, path)
    return path


def read_array(path):
    """Return ``(array, header)`` from a file written by :func:`write_array`."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not an array dump")
        (n,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(n))
        data = fh.read()
    if meta.get("format_version") != VERSION:
        raise ValueError(f"unsupported dump version {meta.get('format_version')}")
    arr = np.frombuffer(data, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).copy()
    return arr, meta
