"""IDX parsing, pixel-regression tasks and PGM rendering."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npkit import images
from npkit.errors import DomainError, FormatError

FIXTURES = Path(__file__).parent / "fixtures"
MNIST = Path(__file__).resolve().parents[1] / "data" / "mnist_10k.idx.gz"


def _idx(count, rows, cols, pixels, magic=0x803):
    return struct.pack(">IIII", magic, count, rows, cols) + bytes(pixels)


def test_hand_built_idx():
    parsed = images.parse_idx(_idx(1, 2, 2, [0, 255, 128, 64]))
    assert (parsed.count, parsed.rows, parsed.cols) == (1, 2, 2)
    np.testing.assert_array_equal(parsed.pixels.reshape(-1), [0, 255, 128, 64])


def test_vector_magic_rejected():
    with pytest.raises(FormatError, match="magic"):
        images.parse_idx(_idx(1, 2, 2, [0, 1, 2, 3], magic=0x801))


@pytest.mark.parametrize("data", [b"\x00\x00\x08", _idx(2, 2, 2, [0] * 7), _idx(1, 2, 2, [0] * 5)])
def test_truncated_or_padded_rejected(data):
    with pytest.raises(FormatError):
        images.parse_idx(data)


def test_dimension_overflow_rejected():
    with pytest.raises(FormatError, match="overflow"):
        images.parse_idx(struct.pack(">IIII", 0x803, 0xFFFFFFFF, 0xFFFF, 0xFFFF))


def test_fixture_file_round_trip():
    raw = (FIXTURES / "two_3x4.idx").read_bytes()
    parsed = images.load_idx(FIXTURES / "two_3x4.idx")
    assert (parsed.count, parsed.rows, parsed.cols) == (2, 3, 4)
    assert images.write_idx(parsed) == raw


def test_gzip_transparent(tmp_path):
    raw = (FIXTURES / "two_3x4.idx").read_bytes()
    (tmp_path / "x.idx.gz").write_bytes(gzip.compress(raw))
    np.testing.assert_array_equal(images.load_idx(tmp_path / "x.idx.gz").pixels,
                                  images.parse_idx(raw).pixels)


@pytest.mark.skipif(not MNIST.exists(), reason="bundled MNIST subset missing")
def test_bundled_mnist_header():
    data = images.load_idx(MNIST)
    assert (data.count, data.rows, data.cols) == (10000, 28, 28)
    assert data.pixels.max() == 255 and data.pixels.min() == 0


def test_coordinates_of_2x2_black_image():
    xs, ys = images.image_to_xy(np.zeros((2, 2), dtype=np.uint8))
    np.testing.assert_array_equal(xs, [[0, 0], [1, 0], [0, 1], [1, 1]])
    assert not ys.any()


def test_coordinates_are_a_bijection():
    xs = images.pixel_coordinates(28, 28)
    idx = np.rint(xs[:, 1] * 27).astype(int) * 28 + np.rint(xs[:, 0] * 27).astype(int)
    np.testing.assert_array_equal(idx, np.arange(784))
    assert xs.min() == 0 and xs.max() == 1


def test_full_context_task(rng):
    img = images.load_idx(FIXTURES / "two_3x4.idx")[0]
    task = images.to_pixel_task(img, rng, 12)
    assert sorted(task.context_idx) == list(range(12)) and task.n_target == 12


def test_context_bounds(rng):
    img = np.zeros((2, 2), dtype=np.uint8)
    for bad in (0, 5):
        with pytest.raises(DomainError):
            images.to_pixel_task(img, rng, bad)


def test_context_has_no_duplicates():
    img = np.zeros((5, 5), dtype=np.uint8)
    for seed in range(1000):
        task = images.to_pixel_task(img, np.random.default_rng(seed), 1 + seed % 25)
        assert len(set(task.context_idx.tolist())) == task.n_context


def test_pixel_batch(rng):
    data = images.load_idx(FIXTURES / "two_3x4.idx")
    tasks = images.sample_pixel_batch(data, 6, 8, (2, 5), rng)
    assert all(t.n_target == 8 and 2 <= t.n_context <= 5 for t in tasks)
    assert all(((t.ys >= 0) & (t.ys <= 1)).all() for t in tasks)


def test_render_constant_half(tmp_path):
    path = images.render(np.full(6, 0.5), 2, 3, tmp_path / "half.pgm")
    assert path.read_bytes() == b"P5\n3 2\n255\n" + bytes([128] * 6)


def test_render_clamps(tmp_path):
    images.render(np.array([-0.3, 1.7]), 1, 2, tmp_path / "c.pgm")
    np.testing.assert_array_equal(images.read_pgm(tmp_path / "c.pgm"), [[0, 255]])


def test_render_wrong_size(tmp_path):
    with pytest.raises(DomainError):
        images.render(np.zeros(5), 2, 3, tmp_path / "bad.pgm")


def test_parse_task_render_reproduces_source(tmp_path):
    data = images.load_idx(FIXTURES / "two_3x4.idx")
    for i in range(data.count):
        _, ys = images.image_to_xy(data[i])
        images.render(ys, data.rows, data.cols, tmp_path / f"{i}.pgm")
        assert images.read_pgm(tmp_path / f"{i}.pgm").tobytes() == data[i].tobytes()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=1, max_size=64))
def test_quantize_inverts_scaling(values):
    raw = np.array(values, dtype=np.uint8)
    np.testing.assert_array_equal(images.quantize(raw / 255.0), raw)
