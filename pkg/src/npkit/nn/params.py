"""Named parameter storage and the ``NPK1`` binary checkpoint format.

Layout (all integers little-endian u32, data little-endian f64)::

    b"NPK1" | count | { name_len | utf8 name | ndim | dims[ndim] | data } * count
"""
from __future__ import annotations

import struct
from collections.abc import MutableMapping
from pathlib import Path

import numpy as np

from ..errors import DimensionError, FormatError, NumericError

MAGIC = b"NPK1"


class ParamStore(MutableMapping):
    """Ordered name -> float64 array map whose shapes are fixed once set."""

    def __init__(self, items=None):
        self._data: dict[str, np.ndarray] = {}
        if items:
            for name, value in dict(items).items():
                self[name] = value

    def __getitem__(self, name):
        return self._data[name]

    def __setitem__(self, name, value):
        if not isinstance(name, str) or not name:
            raise KeyError(f"parameter names must be non-empty strings, got {name!r}")
        value = np.array(value, dtype=np.float64)
        if not np.isfinite(value).all():
            raise NumericError(f"parameter {name!r} contains non-finite entries")
        if name in self._data and self._data[name].shape != value.shape:
            raise DimensionError(
                f"parameter {name!r} has shape {self._data[name].shape}; refusing {value.shape}")
        self._data[name] = value

    def __delitem__(self, name):
        raise TypeError("parameters cannot be removed from a ParamStore")

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        inner = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._data.items())
        return f"ParamStore({inner})"

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._data.items()})

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._data.items()}

    def to_bytes(self) -> bytes:
        return dumps(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamStore":
        return loads(data)


def dumps(params) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name, value in params.items():
        encoded = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def loads(data: bytes) -> ParamStore:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise FormatError(f"bad checkpoint magic {bytes(view[:4])!r}, expected {MAGIC!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("checkpoint truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    store = ParamStore()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("checkpoint tensor name is not valid UTF-8") from None
        if name in store:
            raise FormatError(f"duplicate tensor name {name!r} in checkpoint")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
        store[name] = arr
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after checkpoint payload")
    return store


def save(params, path) -> None:
    Path(path).write_bytes(dumps(params))


def load(path) -> ParamStore:
    return loads(Path(path).read_bytes())
