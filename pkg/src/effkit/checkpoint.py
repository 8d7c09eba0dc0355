"""Single-file checkpoint container.

Layout: a little-endian uint64 giving the byte length of a UTF-8 JSON
index, the index itself, then concatenated tensor blobs in the binary
format of :mod:`effkit.tensor`. The index maps each tensor name to its
offset (relative to the start of the blob section), shape and dtype, and
carries a free-form ``meta`` object. Writes go to a temporary file in the
target directory followed by an atomic rename.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile

import numpy as np

from .tensor import read_tensor, write_tensor


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(arrays)
    blobs = io.BytesIO()
    index_tensors = {}
    for name in names:
        arr = np.asarray(arrays[name], dtype=np.float64)
        offset = blobs.tell()
        write_tensor(blobs, arr)
        index_tensors[name] = {
            "offset": offset,
            "shape": list(arr.shape),
            "dtype": "f64",
        }
    index = {"meta": meta or {}, "tensors": index_tensors}
    index_bytes = json.dumps(index, sort_keys=True, separators=(",", ":")).encode()

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(struct.pack("<Q", len(index_bytes)))
            fh.write(index_bytes)
            fh.write(blobs.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) != 8:
            raise ValueError("truncated checkpoint header")
        (index_len,) = struct.unpack("<Q", raw)
        index = json.loads(fh.read(index_len).decode())
        base = fh.tell()
        arrays = {}
        for name, entry in index["tensors"].items():
            fh.seek(base + entry["offset"])
            arr = read_tensor(fh)
            if list(arr.shape) != entry["shape"]:
                raise ValueError(f"{name}: blob shape {arr.shape} != index {entry['shape']}")
            arrays[name] = arr
    return arrays, index["meta"]
