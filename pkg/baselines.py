"""
Distances the sparse registration is compared against: plain Euclidean,
two-sided tangent distance, and pixel-domain descent started at the identity.
"""
import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from errors import InvalidArgumentError
from geometry import GroupKind, TransformParams
from imaging import Image, check_dims, l2_norm, warp_about_center
from registration import RasterModel, RefinementConfig, coords_to_params, fd_steps, riemannian_descent

logger = logging.getLogger(__name__)

# Configuration
SYMMETRY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class TangentBasis:
    """Base image and one tangent image per group parameter, taken at the identity."""
    base: Image
    tangents: np.ndarray        # (P, H, W)
    kind: GroupKind

    def __post_init__(self):
        if self.tangents.shape[1:] != self.base.shape:
            raise InvalidArgumentError(f"tangent images {self.tangents.shape[1:]} do not match base {self.base.shape}")

    @property
    def matrix(self) -> np.ndarray:
        """(H*W, P), one flattened tangent per column."""
        return self.tangents.reshape(len(self.tangents), -1).T


def tangent_basis(img: Image, kind: GroupKind = GroupKind.SIM2,
                  rcfg: Optional[RefinementConfig] = None) -> TangentBasis:
    """Central differences of the centered warp along each descent coordinate."""
    rcfg = rcfg or RefinementConfig()
    h = fd_steps(kind, rcfg)
    zero = np.zeros(len(h))
    tangents = []
    for k, step in enumerate(h):
        plus = TransformParams.from_array(coords_to_params(zero + step * np.eye(len(h))[k], kind)[0])
        minus = TransformParams.from_array(coords_to_params(zero - step * np.eye(len(h))[k], kind)[0])
        diff = warp_about_center(img, plus, kind).pixels - warp_about_center(img, minus, kind).pixels
        tangents.append(diff / (2.0 * step))
    return TangentBasis(img, np.stack(tangents), kind)


def euclidean_distance(img1: Image, img2: Image) -> float:
    check_dims(img1, img2)
    return l2_norm(img1 - img2)


@dataclass(frozen=True)
class TangentFit:
    """Result of the joint tangent-plane solve; `rank_deficient` flags a minimum-norm solution."""
    distance: float
    rank: int
    columns: int

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.columns


def tangent_fit(img1: Image, img2: Image, kind: GroupKind = GroupKind.SIM2,
                rcfg: Optional[RefinementConfig] = None) -> TangentFit:
    """
    min ||(I1 + T1 x) - (I2 + T2 y)|| over both tangent planes, one joint
    least-squares solve. Never above the Euclidean distance.
    """
    check_dims(img1, img2)
    t1 = tangent_basis(img1, kind, rcfg).matrix
    t2 = tangent_basis(img2, kind, rcfg).matrix
    system = np.hstack([t1, -t2])
    rhs = (img2.pixels - img1.pixels).ravel()
    sol, _, rank, _ = linalg.lstsq(system, rhs)
    fit = TangentFit(min(float(np.linalg.norm(system @ sol - rhs)), euclidean_distance(img1, img2)),
                     int(rank), system.shape[1])
    if fit.rank_deficient:
        logger.warning(f"⚠️ Tangent system rank {rank} < {system.shape[1]}, minimum-norm solution used")
    return fit


def tangent_distance(img1: Image, img2: Image, kind: GroupKind = GroupKind.SIM2,
                     rcfg: Optional[RefinementConfig] = None) -> float:
    return tangent_fit(img1, img2, kind, rcfg).distance


def gd_distance(img1: Image, img2: Image, rcfg: Optional[RefinementConfig] = None,
                kind: GroupKind = GroupKind.SIM2) -> tuple:
    """
    min ||warp(I1, eta) - I2|| by metric-gradient descent from the identity,
    warps taken about the image center. Returns (distance, eta).
    """
    check_dims(img1, img2)
    start = time.time()

    def render(etas: np.ndarray) -> np.ndarray:
        return np.stack([warp_about_center(img1, TransformParams.from_array(row), kind).pixels for row in etas])

    result = riemannian_descent(RasterModel(render, img2.pixels), TransformParams.identity(), kind, rcfg)
    logger.debug(f"gd distance {result.value:.5g} in {result.iterations} iterations "
                 f"⏱️ {time.time() - start:.2f}s")
    return result.value, result.eta


def gd_distances(img1: Image, img2: Image, rcfg: Optional[RefinementConfig] = None,
                 kind: GroupKind = GroupKind.SIM2) -> tuple:
    """Both directions of gd_distance; a gap above 1e-6 is logged, not raised."""
    d12, _ = gd_distance(img1, img2, rcfg, kind)
    d21, _ = gd_distance(img2, img1, rcfg, kind)
    if abs(d12 - d21) > SYMMETRY_TOL:
        logger.warning(f"⚠️ gd distance asymmetric: {d12:.5g} vs {d21:.5g}")
    return d12, d21
