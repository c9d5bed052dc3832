#!/usr/bin/env python3
"""Tests de la poursuite NMP et des approximations parcimonieuses."""
import math
import os
import sys
import tempfile

import numpy as np
import pytest

# Add parent dir to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dictionary import DictionaryConfig, MotherFunction, rasterize_atom
from errors import DataError, InvalidArgumentError
from geometry import GroupKind, TransformParams, params_close
from imaging import Image, l2_norm
from sparse import SparseApprox, nmp, synthesize, transform_approx

CFG = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=2.0), width=41, height=41)


def test_single_atom_recovered():
    gamma = TransformParams(20.0, 20.0, 1.0, math.pi / 4)
    img = rasterize_atom(gamma, CFG).raster
    approx, trace = nmp(img, 1, CFG)
    assert len(approx) == 1
    assert abs(approx.coeffs[0] - 1.0) < 1e-6
    assert params_close(approx.supports[0], gamma, 1e-9)
    assert trace[0] == pytest.approx(1.0) and trace[-1] < 1e-6
    print("✅ K=1 on a dictionary atom")


def test_disjoint_atoms_recovered_in_order():
    g1, g2 = TransformParams(10.0, 10.0), TransformParams(30.0, 30.0, 1.0, math.pi / 2)
    img = rasterize_atom(g1, CFG).raster.scaled(2.0) + rasterize_atom(g2, CFG).raster
    approx, trace = nmp(img, 2, CFG)
    assert np.allclose(approx.coeffs, (2.0, 1.0), atol=1e-6)
    assert params_close(approx.supports[0], g1) and params_close(approx.supports[1], g2)
    assert np.all(np.diff(trace) <= 1e-12)
    assert l2_norm(synthesize(approx) - img) < 1e-6
    print("✅ two disjoint atoms")


def test_residual_decrements_are_pythagorean():
    rng = np.random.default_rng(3)
    img = Image(rng.uniform(0.0, 1.0, (41, 41)))
    approx, trace = nmp(img, 6, CFG)
    assert np.all(np.diff(trace) <= 1e-12)
    assert all(c > 0 for c in approx.coeffs)
    if len(approx) == len(trace) - 1:
        drops = np.array(trace[:-1]) ** 2 - np.array(trace[1:]) ** 2
        assert np.allclose(drops, np.array(approx.coeffs) ** 2, atol=1e-9)
    else:
        assert trace[-1] < trace[0]


def test_positivity_and_zero_image_stop():
    img = rasterize_atom(TransformParams(20.0, 20.0), CFG).raster.scaled(-1.0)
    approx, trace = nmp(img, 1, CFG)
    assert len(approx) == 0 and len(trace) == 1
    approx, trace = nmp(Image.zeros(41, 41), 5, CFG)
    assert len(approx) == 0 and trace == [0.0]


def test_stop_threshold():
    g1, g2 = TransformParams(10.0, 10.0), TransformParams(30.0, 30.0)
    img = rasterize_atom(g1, CFG).raster.scaled(2.0) + rasterize_atom(g2, CFG).raster
    approx, trace = nmp(img, 10, CFG, stop_threshold=1.5)
    assert len(approx) == 1 and trace[-1] <= 1.5
    approx, _ = nmp(img, 10, CFG, stop_threshold=10.0)
    assert len(approx) == 0
    print("✅ error-controlled stop")


def test_nmp_rejects_bad_arguments():
    with pytest.raises(InvalidArgumentError):
        nmp(Image.zeros(41, 41), 0, CFG)
    with pytest.raises(InvalidArgumentError):
        nmp(Image.zeros(40, 41), 1, CFG)
    with pytest.raises(InvalidArgumentError):
        nmp(Image.zeros(41, 41), 1, CFG, stop_threshold=-1.0)


def test_sparse_approx_validation():
    with pytest.raises(InvalidArgumentError):
        SparseApprox((1.0, -0.5), (TransformParams(5.0, 5.0), TransformParams(6.0, 6.0)), CFG)
    with pytest.raises(InvalidArgumentError):
        SparseApprox((1.0,), (TransformParams(5.0, 5.0), TransformParams(6.0, 6.0)), CFG)
    with pytest.raises(InvalidArgumentError):
        SparseApprox((1.0,), (TransformParams(5.0, 5.0, 2.0, 0.0),), CFG)
    approx = SparseApprox((1.0, 2.0), (TransformParams(10.0, 10.0), TransformParams(30.0, 30.0)), CFG)
    assert approx.K == 2
    assert approx.l1 == pytest.approx(1.0 / approx.norms[0] + 2.0 / approx.norms[1])


def test_synthesize():
    assert np.all(synthesize(SparseApprox.empty(CFG)).pixels == 0.0)
    gamma = TransformParams(3.0, 20.0, 1.0, math.pi / 8)
    single = SparseApprox((1.0,), (gamma,), CFG)
    assert np.allclose(synthesize(single).pixels, rasterize_atom(gamma, CFG).raster.pixels)


def test_transform_approx():
    approx = SparseApprox((1.5, 0.5), (TransformParams(15.0, 20.0), TransformParams(25.0, 22.0, 1.0, 1.0)), CFG)
    same = transform_approx(approx, TransformParams.identity())
    assert all(params_close(a, b) for a, b in zip(same.supports, approx.supports))
    assert same.coeffs == approx.coeffs and not any(same.occluded)

    centered = SparseApprox((1.0,), (TransformParams(20.0, 20.0, 1.0, 0.3),), CFG)
    flip = transform_approx(centered, TransformParams(40.0, 40.0, 1.0, math.pi))
    assert np.allclose(synthesize(flip).pixels, synthesize(centered).pixels, atol=1e-9)

    gone = transform_approx(approx, TransformParams(30.0, 0.0))
    assert any(gone.occluded)
    assert gone.norms == approx.norms
    print("✅ transformed approximations")


def test_csv_round_trip():
    approx = SparseApprox((1.25, 0.5), (TransformParams(10.0, 12.0), TransformParams(30.0, 20.0, 1.0, 0.5)), CFG)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "p.csv")
        approx.save_csv(path)
        back = SparseApprox.load_csv(path, CFG)
        with open(path, "w") as f:
            f.write("c,bx\n1,2\n")
        with pytest.raises(DataError):
            SparseApprox.load_csv(path, CFG)
    assert back.coeffs == approx.coeffs
    assert all(params_close(a, b, 1e-9) for a, b in zip(back.supports, approx.supports))


def test_csv_keeps_selection_norms():
    # a moved atom keeps the gain it was selected with, not the one of its new sub-pixel position
    approx = SparseApprox((1.0,), (TransformParams(20.0, 20.0, 1.0, 0.3),), CFG)
    moved = transform_approx(approx, TransformParams(5.5, -3.25, 1.0, 0.4))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "moved.csv")
        moved.save_csv(path)
        back = SparseApprox.load_csv(path, CFG)
    assert back.norms == pytest.approx(approx.norms, rel=1e-10)
    assert np.allclose(back.weights, moved.weights, rtol=1e-10)


if __name__ == "__main__":
    print("=" * 60)
    print("SPARSE")
    print("=" * 60)
    test_single_atom_recovered()
    test_disjoint_atoms_recovered_in_order()
    test_residual_decrements_are_pythagorean()
    test_positivity_and_zero_image_stop()
    test_stop_threshold()
    test_nmp_rejects_bad_arguments()
    test_sparse_approx_validation()
    test_synthesize()
    test_transform_approx()
    test_csv_round_trip()
    test_csv_keeps_selection_norms()
    print("=" * 60)
