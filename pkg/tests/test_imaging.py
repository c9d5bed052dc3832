#!/usr/bin/env python3
"""Tests des images : normes, warp, PGM et IDX."""
import math
import os
import sys
import tempfile

import numpy as np
import pytest

# Add parent dir to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import DataError, IdxFormatError, InvalidArgumentError, PgmParseError
from geometry import GroupKind, TransformParams, inverse
from imaging import (Image, encode_pgm, inner_product, l2_norm, load_idx, load_pgm, parse_pgm, save_pgm, warp,
                     warp_about_center)


def _blob(size=41, sigma=4.0, cx=None, cy=None) -> Image:
    cx = (size - 1) / 2 if cx is None else cx
    cy = (size - 1) / 2 if cy is None else cy
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    return Image(np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2)))


def _write_idx(directory, labels, rows=4, cols=4, image_magic=0x803):
    n = len(labels)
    images = (np.arange(n * rows * cols) % 256).astype(np.uint8)
    img_path = os.path.join(directory, "images.idx")
    lbl_path = os.path.join(directory, "labels.idx")
    with open(img_path, "wb") as f:
        f.write(np.array([image_magic, n, rows, cols], dtype=">u4").tobytes() + images.tobytes())
    with open(lbl_path, "wb") as f:
        f.write(np.array([0x801, n], dtype=">u4").tobytes() + np.asarray(labels, dtype=np.uint8).tobytes())
    return img_path, lbl_path


def test_norms_and_inner_products():
    assert l2_norm(Image.zeros(5, 4)) == 0.0
    px = np.zeros((3, 3))
    px[1, 1] = 3.0
    assert l2_norm(Image(px)) == 3.0
    unit = _blob().scaled(1.0 / l2_norm(_blob()))
    assert abs(inner_product(unit, unit) - 1.0) < 1e-9
    a, b = np.zeros((4, 4)), np.zeros((4, 4))
    a[0, 0], b[3, 3] = 1.0, 1.0
    assert inner_product(Image(a), Image(b)) == 0.0
    with pytest.raises(InvalidArgumentError):
        inner_product(Image.zeros(3, 3), Image.zeros(4, 3))
    print("✅ norms and inner products")


def test_box_overlap_is_one_minus_offset():
    length = 4
    a, b = np.zeros((1, 10)), np.zeros((1, 10))
    a[0, 2:2 + length] = 1.0
    b[0, 3:3 + length] = 1.0
    a, b = Image(a / np.linalg.norm(a)), Image(b / np.linalg.norm(b))
    assert abs(inner_product(a, b) - (1.0 - 1.0 / length)) < 1e-12


def test_warp_identity_and_integer_shift():
    img = _blob(size=21, cx=8, cy=9)
    assert np.array_equal(warp(img, TransformParams.identity(), GroupKind.SIM2).pixels, img.pixels)
    shifted = warp(img, TransformParams(2.0, 1.0), GroupKind.TRANSLATION)
    assert np.allclose(shifted.pixels[1:, 2:], img.pixels[:-1, :-2])
    print("✅ identity and integer translation")


def test_warp_rotation_preserves_norm():
    img = _blob()
    rotated = warp_about_center(img, TransformParams(0.0, 0.0, 1.0, math.pi / 2), GroupKind.SE2)
    assert abs(l2_norm(rotated) / l2_norm(img) - 1.0) < 0.02
    scaled = warp_about_center(img, TransformParams(0.0, 0.0, 1.3, 0.0), GroupKind.SIM2)
    assert abs(l2_norm(scaled) / l2_norm(img) - 1.0) < 0.02
    print("✅ warp is near unitary")


def test_warp_round_trip_interior():
    img = _blob(size=61, sigma=5.0)
    eta = TransformParams(3.0, -2.0, 1.2, 0.5)
    there = warp_about_center(img, eta, GroupKind.SIM2)
    back = warp_about_center(there, inverse(eta, GroupKind.SIM2), GroupKind.SIM2)
    border = int(math.ceil(eta.a * math.sqrt(2.0))) + 8
    inner = (slice(border, -border), slice(border, -border))
    err = np.linalg.norm(back.pixels[inner] - img.pixels[inner]) / np.linalg.norm(img.pixels[inner])
    assert err <= 0.05


def test_pgm_parse():
    img = parse_pgm(b"P5\n2 1\n255\n" + bytes([0, 255]))
    assert np.array_equal(img.pixels, [[0.0, 1.0]])
    img = parse_pgm(b"P2\n# a comment\n3 1 # trailing\n255\n0 51\n255\n")
    assert np.allclose(img.pixels, [[0.0, 0.2, 1.0]])
    print("✅ P5 and P2 headers")


def test_pgm_errors_carry_offset():
    with pytest.raises(PgmParseError) as e:
        parse_pgm(b"P6\n2 2\n255\n")
    assert e.value.offset == 0
    with pytest.raises(PgmParseError) as e:
        parse_pgm(b"P5\n2 2\n255\n" + bytes([1, 2]))
    assert e.value.offset > 0
    with pytest.raises(PgmParseError):
        parse_pgm(b"P5\n2 x\n255\n")
    with pytest.raises(DataError):
        load_pgm("/nonexistent/file.pgm")


def test_pgm_bytes_round_trip():
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(7, 9), dtype=np.uint8)
    data = b"P5\n9 7\n255\n" + raw.tobytes()
    assert encode_pgm(parse_pgm(data)) == data
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "img.pgm")
        save_pgm(parse_pgm(data), path)
        with open(path, "rb") as f:
            assert f.read() == data
        assert np.array_equal(load_pgm(path).pixels, parse_pgm(data).pixels)
    print("✅ P5 round trip")


def test_load_idx_sampling():
    labels = np.repeat(np.arange(10), 110)
    with tempfile.TemporaryDirectory() as tmp:
        img_path, lbl_path = _write_idx(tmp, labels)
        sample = load_idx(img_path, lbl_path, range(6), 100, seed=3)
        assert len(sample) == 600
        assert sorted({label for _, label in sample}) == [0, 1, 2, 3, 4, 5]
        again = load_idx(img_path, lbl_path, range(6), 100, seed=3)
        assert all(np.array_equal(a.pixels, b.pixels) for (a, _), (b, _) in zip(sample, again))
        assert load_idx(img_path, lbl_path, range(6), 0, seed=3) == []
        with pytest.raises(DataError):
            load_idx(img_path, lbl_path, [0], 200, seed=0)
    print("✅ IDX sampling")


def test_load_idx_rejects_bad_files():
    with tempfile.TemporaryDirectory() as tmp:
        img_path, lbl_path = _write_idx(tmp, np.zeros(5, dtype=int), image_magic=0x801)
        with pytest.raises(IdxFormatError):
            load_idx(img_path, lbl_path, [0], 1, seed=0)
        img_path, _ = _write_idx(tmp, np.zeros(5, dtype=int))
        with open(lbl_path, "wb") as f:
            f.write(np.array([0x801, 4], dtype=">u4").tobytes() + bytes(4))
        with pytest.raises(IdxFormatError):
            load_idx(img_path, lbl_path, [0], 1, seed=0)


if __name__ == "__main__":
    print("=" * 60)
    print("IMAGING")
    print("=" * 60)
    test_norms_and_inner_products()
    test_box_overlap_is_one_minus_offset()
    test_warp_identity_and_integer_shift()
    test_warp_rotation_preserves_norm()
    test_warp_round_trip_interior()
    test_pgm_parse()
    test_pgm_errors_carry_offset()
    test_pgm_bytes_round_trip()
    test_load_idx_sampling()
    test_load_idx_rejects_bad_files()
    print("=" * 60)
