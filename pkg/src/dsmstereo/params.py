"""Named parameter tensors with gradient storage, and the checkpoint format.

Checkpoint layout (all integers unsigned 32-bit little-endian)::

    b"DSMCKPT1"
    repeated until EOF:
        name length, name (UTF-8), rank, dims[rank], float64 LE values (row-major)

Tensors whose names start with ``meta.`` carry configuration numbers and are
never optimized.
"""

import struct
from collections.abc import Mapping

import numpy as np

from .errors import ArgumentError, FormatError

MAGIC = b"DSMCKPT1"
META_PREFIX = "meta."


class ParamSet(Mapping):
    """Ordered name -> float64 array mapping plus a parallel gradient store."""

    def __init__(self, tensors=None):
        self._tensors = {}
        self.grads = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __getitem__(self, name):
        return self._tensors[name]

    def __setitem__(self, name, value):
        arr = np.array(value, dtype=np.float64)
        if name in self._tensors and self._tensors[name].shape != arr.shape:
            raise ArgumentError(f"{name}: cannot change shape {self._tensors[name].shape} -> {arr.shape}")
        self._tensors[name] = arr
        self.grads.setdefault(name, np.zeros_like(arr))

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def trainable(self):
        return [name for name in self._tensors if not name.startswith(META_PREFIX)]

    def zero_grad(self):
        for name in self.grads:
            self.grads[name] = np.zeros_like(self._tensors[name])

    def accumulate(self, grads, scale=1.0):
        for name, g in grads.items():
            if g.shape != self._tensors[name].shape:
                raise ArgumentError(f"{name}: gradient shape {g.shape} != parameter shape {self._tensors[name].shape}")
            self.grads[name] = self.grads[name] + scale * g

    def copy(self):
        out = ParamSet({name: value.copy() for name, value in self._tensors.items()})
        out.grads = {name: g.copy() for name, g in self.grads.items()}
        return out

    def equal(self, other):
        """Bitwise equality of names, shapes and values."""
        if list(self) != list(other):
            return False
        return all(self[n].shape == other[n].shape and self[n].tobytes() == other[n].tobytes() for n in self)


def save_checkpoint(path, params):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, value in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a DSM checkpoint (bad magic)", 0)
    pos = len(MAGIC)
    tensors = {}

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated checkpoint while reading {what}", pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", pos - name_len) from None
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(8 * count, f"values of {name}"), dtype="<f8").reshape(dims)
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}", pos)
        tensors[name] = values.astype(np.float64)
    return ParamSet(tensors)
