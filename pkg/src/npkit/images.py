"""Grayscale images as 2-D regression tasks: IDX input, PGM output.

A pixel at (row, col) maps to the input ``(col / (cols - 1), row / (rows - 1))``
and the output ``raw / 255``. Pixels are indexed row-major.
"""
from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError
from .gp import FunctionTask

IDX_UBYTE_3D = 0x00000803
_MAX_PIXELS = 1 << 40

PixelTask = FunctionTask


@dataclass
class IdxImages:
    count: int
    rows: int
    cols: int
    pixels: np.ndarray  # uint8, shape (count, rows, cols)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8).reshape(self.count, self.rows, self.cols)

    def __len__(self):
        return self.count

    def __getitem__(self, i) -> np.ndarray:
        return self.pixels[i]


def parse_idx(data: bytes) -> IdxImages:
    """Parse an unsigned-byte 3-D IDX buffer (the MNIST image layout)."""
    if len(data) < 16:
        raise FormatError(f"IDX header truncated: {len(data)} bytes")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_UBYTE_3D:
        raise FormatError(f"unsupported IDX magic 0x{magic:08x}, expected 0x{IDX_UBYTE_3D:08x}")
    total = count * rows * cols
    if total > _MAX_PIXELS:
        raise FormatError(f"IDX dimensions {count}x{rows}x{cols} overflow the supported size")
    payload = len(data) - 16
    if payload < total:
        raise FormatError(f"IDX payload truncated: expected {total} bytes, found {payload}")
    if payload > total:
        raise FormatError(f"IDX payload has {payload - total} unexpected trailing bytes")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16, count=total)
    return IdxImages(count, rows, cols, pixels.copy())


def write_idx(images: IdxImages) -> bytes:
    return struct.pack(">IIII", IDX_UBYTE_3D, images.count, images.rows, images.cols) + \
        np.ascontiguousarray(images.pixels, dtype=np.uint8).tobytes()


def load_idx(path) -> IdxImages:
    """Read an IDX file from disk, transparently un-gzipping ``.gz`` payloads."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def pixel_coordinates(rows: int, cols: int) -> np.ndarray:
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.stack([c / max(cols - 1, 1), r / max(rows - 1, 1)], axis=1)


def image_to_xy(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    img = np.asarray(img)
    rows, cols = img.shape
    return pixel_coordinates(rows, cols), (img.reshape(-1, 1).astype(np.float64) / 255.0)


def to_pixel_task(img: np.ndarray, rng: np.random.Generator, n_context: int) -> FunctionTask:
    """All pixels as targets, ``n_context`` of them drawn without replacement as context."""
    xs, ys = image_to_xy(img)
    n = xs.shape[0]
    if not 1 <= n_context <= n:
        raise DomainError(f"n_context must lie in [1, {n}], got {n_context}")
    return FunctionTask(xs, ys, rng.choice(n, size=n_context, replace=False))


def sample_pixel_batch(images: IdxImages, batch: int, n_targets: int, context_range,
                       rng: np.random.Generator, pool=None) -> list[FunctionTask]:
    """Training tasks over random pixel subsets of random images.

    Each task keeps ``n_targets`` pixels; the first ``n_context`` of them form the context.
    """
    lo, hi = (int(v) for v in context_range)
    n_pix = images.rows * images.cols
    n_targets = min(int(n_targets), n_pix)
    if not 1 <= lo <= hi <= n_targets:
        raise DomainError(f"invalid context range {context_range} for {n_targets} targets")
    coords = pixel_coordinates(images.rows, images.cols)
    pool = np.arange(images.count) if pool is None else np.asarray(pool)
    tasks = []
    for idx in rng.choice(pool, size=batch):
        flat = images.pixels[idx].reshape(-1).astype(np.float64) / 255.0
        keep = rng.choice(n_pix, size=n_targets, replace=False)
        n_ctx = int(rng.integers(lo, hi + 1))
        tasks.append(FunctionTask(coords[keep], flat[keep, None], np.arange(n_ctx)))
    return tasks


def quantize(values) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8-bit levels."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def render(preds, rows: int, cols: int, path) -> Path:
    """Write predictions as a binary PGM (P5, maxval 255)."""
    pixels = quantize(np.asarray(preds).reshape(-1))
    if pixels.size != rows * cols:
        raise DomainError(f"{pixels.size} predictions cannot fill a {rows}x{cols} image")
    path = Path(path)
    path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise FormatError(f"{path} is not a binary PGM file")
    cols, rows, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    body = data[m.end():]
    if len(body) != rows * cols:
        raise FormatError(f"PGM body has {len(body)} bytes, expected {rows * cols}")
    return np.frombuffer(body, dtype=np.uint8).reshape(rows, cols).copy()
