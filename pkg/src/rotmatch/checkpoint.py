"""Binary checkpoint format shared by the backbone and matcher.

Layout: 8-byte magic "RMCKPT01", an 8-byte little-endian manifest length,
a UTF-8 JSON manifest listing parameter names, shapes, and scalar widths,
then the raw little-endian buffers in manifest order.
"""

import json
import struct

import numpy as np

MAGIC = b"RMCKPT01"

_WIDTH_TO_DTYPE = {4: "<f4", 8: "<f8"}


def save_checkpoint(path, state):
    """Write an ordered {name: float array} mapping."""
    entries = []
    buffers = []
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            width = 4
        elif arr.dtype == np.float64:
            width = 8
        else:
            raise ValueError(f"{name}: checkpoint buffers must be float32/float64, "
                             f"got {arr.dtype}")
        entries.append({"name": name, "shape": list(arr.shape), "width": width})
        buffers.append(arr.astype(_WIDTH_TO_DTYPE[width]).tobytes(order="C"))
    manifest = json.dumps({"params": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for buf in buffers:
            f.write(buf)


def load_checkpoint(path):
    """Read back an ordered {name: ndarray} mapping."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        state = {}
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            width = entry["width"]
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * width)
            if len(raw) != count * width:
                raise ValueError(f"{path}: truncated buffer for {entry['name']}")
            state[entry["name"]] = np.frombuffer(
                raw, dtype=_WIDTH_TO_DTYPE[width]).reshape(shape).copy()
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after last buffer")
    return state
