#!/usr/bin/env python3
"""Tests des distances de référence : euclidienne, tangente, descente de gradient."""
import math
import os
import sys

import numpy as np
import pytest

# Add parent dir to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from baselines import euclidean_distance, gd_distance, gd_distances, tangent_basis, tangent_distance, tangent_fit
from errors import InvalidArgumentError
from geometry import GroupKind, TransformParams
from imaging import Image, l2_norm, warp_about_center


def _ellipse(size=41, sx=6.0, sy=2.0, cx=None, cy=None) -> Image:
    cx = (size - 1) / 2 if cx is None else cx
    cy = (size - 1) / 2 if cy is None else cy
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    return Image(np.exp(-(xs - cx) ** 2 / (2 * sx ** 2) - (ys - cy) ** 2 / (2 * sy ** 2)))


def test_euclidean_distance():
    img = _ellipse()
    assert euclidean_distance(img, img) == 0.0
    a, b = np.zeros((5, 5)), np.zeros((5, 5))
    a[0, 0], b[4, 4] = 1.0, 1.0
    assert euclidean_distance(Image(a), Image(b)) == pytest.approx(math.sqrt(2.0))
    blob = _ellipse(size=61, sx=2.0, sy=2.0, cx=15, cy=30)
    moved = _ellipse(size=61, sx=2.0, sy=2.0, cx=45, cy=30)
    assert euclidean_distance(blob, moved) == pytest.approx(math.sqrt(2.0) * l2_norm(blob), rel=1e-6)
    with pytest.raises(InvalidArgumentError):
        euclidean_distance(Image.zeros(4, 4), Image.zeros(5, 4))
    print("✅ Euclidean distance")


def test_tangent_basis_shape():
    basis = tangent_basis(_ellipse(), GroupKind.SIM2)
    assert basis.tangents.shape == (4, 41, 41)
    assert basis.matrix.shape == (41 * 41, 4)
    assert tangent_basis(_ellipse(), GroupKind.TRANSLATION).tangents.shape[0] == 2


def test_tangent_distance():
    img = _ellipse(sx=4.0, sy=3.0)
    assert tangent_distance(img, img) < 1e-9

    shifted = warp_about_center(img, TransformParams(1.0, 0.0), GroupKind.SIM2)
    euclid = euclidean_distance(img, shifted)
    assert tangent_distance(img, shifted) < 0.2 * euclid
    assert tangent_distance(img, shifted) <= euclid + 1e-9

    ellipse = _ellipse()
    turned = warp_about_center(ellipse, TransformParams(0.0, 0.0, 1.0, math.pi / 2), GroupKind.SIM2)
    euclid_turned = euclidean_distance(ellipse, turned)
    td_turned = tangent_distance(ellipse, turned)
    assert td_turned <= euclid_turned + 1e-9
    assert td_turned > 0.3 * euclid_turned
    print("✅ tangent distance: local invariance only")


def test_tangent_fit_flags_rank_deficiency():
    flat = Image.zeros(41, 41)
    fit = tangent_fit(flat, flat)
    assert fit.rank == 0 and fit.columns == 8
    assert fit.rank_deficient and fit.distance == 0.0

    img = _ellipse(sx=4.0, sy=3.0)
    shifted = warp_about_center(img, TransformParams(1.0, 0.0), GroupKind.SIM2)
    fit = tangent_fit(img, shifted)
    assert not fit.rank_deficient
    assert fit.distance == pytest.approx(tangent_distance(img, shifted))
    print("✅ rank-deficient tangent systems are flagged")


def test_gd_distance():
    img = _ellipse()
    value, eta = gd_distance(img, img)
    assert value < 1e-9 and eta.is_identity(1e-9)

    near = warp_about_center(img, TransformParams(1.0, -1.0, 1.05, 0.1), GroupKind.SIM2)
    value, eta = gd_distance(img, near)
    assert value < 0.1 * euclidean_distance(img, near)
    assert abs(eta.bx - 1.0) < 0.3 and abs(eta.theta - 0.1) < 0.05

    # a half turn about the centre maps one blob on the other, but the identity sees no overlap
    blob = _ellipse(sx=1.5, sy=1.5, cx=8.0, cy=20.0)
    opposite = _ellipse(sx=1.5, sy=1.5, cx=32.0, cy=20.0)
    value, eta = gd_distance(blob, opposite, kind=GroupKind.SE2)
    euclid = euclidean_distance(blob, opposite)
    assert value <= euclid + 1e-9
    assert value > 0.9 * euclid
    assert abs(eta.theta) < 0.5
    print("✅ pixel-domain descent: local basin only")


def test_gd_distances_both_directions():
    img = _ellipse(sx=4.0, sy=3.0)
    other = warp_about_center(img, TransformParams(0.5, 0.5), GroupKind.SIM2)
    d12, d21 = gd_distances(img, other)
    assert d12 >= 0.0 and d21 >= 0.0
    assert d12 < 0.1 * euclidean_distance(img, other)


if __name__ == "__main__":
    print("=" * 60)
    print("BASELINES")
    print("=" * 60)
    test_euclidean_distance()
    test_tangent_basis_shape()
    test_tangent_distance()
    test_tangent_fit_flags_rank_deficiency()
    test_gd_distance()
    test_gd_distances_both_directions()
    print("=" * 60)
