"""
Small hand-built dictionaries and pattern pairs on which the registration
guarantees are known to hold or to break. Used by the tests and by the
`analyze` services (box dictionaries).
"""
import math

import numpy as np

from dictionary import Atom, DictionaryConfig, MotherFunction, MotherKind, rasterize_atom
from errors import InvalidArgumentError
from geometry import GroupKind, TransformParams
from imaging import Image
from sparse import SparseApprox

# Configuration
R3_ANGLE = math.pi / 20


def _vector_atom(values, index: int) -> Atom:
    """A vector of R^3 (or R^n) stored as a 1 x n raster, unit norm."""
    v = np.asarray(values, dtype=float)
    return Atom(TransformParams(float(index), 0.0), Image((v / np.linalg.norm(v))[None, :]))


def r3_family(variant: str = "v", angle: float = R3_ANGLE) -> list:
    """
    (e1, e2, v) with v = (0, cos t, sin t), or (e1, e2, v') with
    v' = (cos t / sqrt 2, cos t / sqrt 2, sin t). The first family cancels only
    between e2 and v; the second cancels e1 + e2 against v' with a pair
    measure near 0.78.
    """
    c, s = math.cos(angle), math.sin(angle)
    if variant == "v":
        third = (0.0, c, s)
    elif variant == "v_prime":
        third = (c / math.sqrt(2.0), c / math.sqrt(2.0), s)
    else:
        raise InvalidArgumentError(f"unknown variant '{variant}', expected 'v' or 'v_prime'")
    return [_vector_atom((1.0, 0.0, 0.0), 0), _vector_atom((0.0, 1.0, 0.0), 1), _vector_atom(third, 2)]


def five_squares(side: int = 8, kappa: int = 1) -> list:
    """
    Four side x side squares tiling a 2side x 2side block, plus one 2side square
    offset by kappa pixels. With a = (1/2, 1/2, 1/2, 1/2, -1) the sum nearly
    vanishes, yet every opposite-sign pair stays about 1 apart.
    """
    n = 2 * side + kappa + 1
    atoms = []
    for k, (ox, oy) in enumerate([(0, 0), (side, 0), (0, side), (side, side)]):
        px = np.zeros((n, n))
        px[oy:oy + side, ox:ox + side] = 1.0
        atoms.append(Atom(TransformParams(float(ox), float(oy)), Image(px / np.linalg.norm(px))))
    px = np.zeros((n, n))
    px[kappa:kappa + 2 * side, kappa:kappa + 2 * side] = 1.0
    atoms.append(Atom(TransformParams(float(kappa), float(kappa)), Image(px / np.linalg.norm(px))))
    return atoms


def square_patterns(kappa: float = 1.0, size: int = 40) -> tuple:
    """
    p: four half-weight scale-2 blobs at c +- 2; q: one scale-4 blob at c + (kappa, 0).
    Isotropic mother under SIM(2), norms pinned to 1 so both sides carry unit
    plane energy. Every feature-pair candidate maps one small blob onto the
    big one and drags the other three off, while a plain shift nearly aligns
    the two patterns.
    """
    cfg = DictionaryConfig(kind=GroupKind.SIM2, mother=MotherFunction(nu=1.0), width=size, height=size,
                           scales=(1.0, 2.0, 4.0))
    c = size // 2
    supports = tuple(TransformParams(c + dx, c + dy, 2.0, 0.0) for dx in (-2, 2) for dy in (-2, 2))
    p = SparseApprox((0.5,) * 4, supports, cfg, norms=(1.0,) * 4)
    q = SparseApprox((1.0,), (TransformParams(c + kappa, c, 4.0, 0.0),), cfg, norms=(1.0,))
    return p, q


def near_isotropic_patterns(nu: float = 1.1, offset: float = 5.0, size: int = 41) -> tuple:
    """
    Two near-isotropic atoms at c +- offset on the x axis, horizontal in p and
    vertical in q. The identity almost aligns them; every candidate is a
    quarter turn that swings the second atom away.
    """
    cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=nu), width=size, height=size)
    c = size // 2
    p = SparseApprox((1.0, 1.0), (TransformParams(c - offset, c), TransformParams(c + offset, c)), cfg)
    q = SparseApprox((1.0, 1.0), (TransformParams(c - offset, c, 1.0, math.pi / 2),
                                  TransformParams(c + offset, c, 1.0, math.pi / 2)), cfg)
    return p, q


def bar_patterns(nu: float = 8.0, shift: float = 2.0, size: int = 80) -> tuple:
    """
    Two long perpendicular bars, each slid along its own axis in q. The best
    global transformation stays the identity while any single-bar match moves
    the other bar sideways.
    """
    cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=nu), width=size, height=size)
    p = SparseApprox((1.0, 1.0), (TransformParams(40.0, 20.0), TransformParams(20.0, 50.0, 1.0, math.pi / 2)), cfg)
    q = SparseApprox((1.0, 1.0), (TransformParams(40.0 + shift, 20.0),
                                  TransformParams(20.0, 50.0 + shift, 1.0, math.pi / 2)), cfg)
    return p, q


def box_config(n_atoms: int, length: int) -> DictionaryConfig:
    """1 x N raster wide enough that n_atoms unit-step boxes fit without truncation."""
    return DictionaryConfig(kind=GroupKind.TRANSLATION, mother=MotherFunction(kind=MotherKind.BOX, length=length),
                            width=n_atoms - 1 + length, height=1)


def box_atoms(n_atoms: int, length: int = 8) -> list:
    cfg = box_config(n_atoms, length)
    return [rasterize_atom(TransformParams(float(k), 0.0), cfg) for k in range(n_atoms)]
