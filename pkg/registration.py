"""
Registration of sparse patterns: candidate transformations between atom pairs,
the approximate invariant distance d_a, and a metric-gradient refinement.
"""
import logging
import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy import linalg

from dictionary import MotherKind, gaussian_inner_products
from errors import InvalidArgumentError
from geometry import (GroupKind, Stabilizer, TransformParams, TWO_PI, angle_difference, compose_arrays,
                      distance_from_identity, inverse_arrays)
from sparse import SparseApprox, render_patterns, synthesize

logger = logging.getLogger(__name__)

# Configuration
DEDUP_TOL = 1e-9
TIE_TOL = 1e-9
PLANE_CHUNK = 2_000_000     # candidate x atom x atom inner products per block


class Objective(str, Enum):
    PLANE = "plane"     # closed-form continuous inner products, exactly unitary
    RASTER = "raster"   # re-rasterized atoms on the common raster, occlusion-aware


@dataclass(frozen=True)
class Candidate:
    eta: TransformParams
    i: int              # atom of p
    j: int              # atom of q
    pi: TransformParams


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """delta_j o pi o gamma_i^-1 for all atom pairs and stabilizer elements, deduplicated."""
    etas: np.ndarray        # (n, 4)
    i: np.ndarray
    j: np.ndarray
    pi: np.ndarray          # (n, 4)
    raw_count: int

    def __len__(self) -> int:
        return len(self.etas)

    def __iter__(self):
        return iter(self.candidates)

    @property
    def candidates(self) -> list:
        return [Candidate(TransformParams.from_array(e), int(i), int(j), TransformParams.from_array(p))
                for e, i, j, p in zip(self.etas, self.i, self.j, self.pi)]

    def contains(self, eta: TransformParams, tol: float = 1e-6) -> bool:
        diff = np.abs(self.etas[:, :3] - eta.as_array()[:3])
        dtheta = np.abs(self.etas[:, 3] - eta.theta) % TWO_PI
        dtheta = np.minimum(dtheta, TWO_PI - dtheta)
        return bool(np.any(np.all(diff <= tol, axis=1) & (dtheta <= tol)))


@dataclass(frozen=True)
class RefinementConfig:
    max_iters: int = 50
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 30
    fd_translation: float = 0.5
    fd_log_scale: float = 0.01
    fd_rotation: float = 0.01
    ridge: float = 1e-8
    tol: float = 1e-12

    def __post_init__(self):
        values = [self.max_iters, self.initial_step, self.shrink, self.sufficient_decrease,
                  self.max_backtracks, self.fd_translation, self.fd_log_scale, self.fd_rotation, self.ridge]
        if any(not v > 0 for v in values) or not self.shrink < 1.0:
            raise InvalidArgumentError("refinement parameters must be positive (and shrink < 1)")


@dataclass(frozen=True)
class RefinementResult:
    eta: TransformParams
    value: float            # sqrt(J)
    trace: tuple            # J per accepted iterate, starting point included
    iterations: int
    metric_fallback: bool


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    eta_hat: TransformParams
    d_a: float
    candidates: CandidateSet
    values: np.ndarray
    refined: bool = False
    eta_refined: Optional[TransformParams] = None
    d_refined: Optional[float] = None
    metric_fallback: bool = False
    objective: Objective = Objective.PLANE

    def to_frame(self) -> pd.DataFrame:
        cs = self.candidates
        return pd.DataFrame({
            "i": cs.i, "j": cs.j, "pi_theta": cs.pi[:, 3],
            "bx": cs.etas[:, 0], "by": cs.etas[:, 1], "a": cs.etas[:, 2], "theta": cs.etas[:, 3],
            "value": self.values,
        })


# --- candidate set ------------------------------------------------------------

def _dedup_mask(etas: np.ndarray, tol: float) -> np.ndarray:
    """First occurrence of every eta, up to `tol`, on a quantized grid (rotation taken mod 2pi)."""
    theta = np.mod(etas[:, 3], TWO_PI)
    theta[theta > TWO_PI - tol / 2] = 0.0
    keys = np.round(np.column_stack([etas[:, :3], theta]) / tol)
    _, first = np.unique(keys, axis=0, return_index=True)
    keep = np.zeros(len(etas), dtype=bool)
    keep[first] = True
    return keep


def candidate_set(p: SparseApprox, q: SparseApprox, stab: Optional[Stabilizer] = None) -> CandidateSet:
    if not p.coeffs or not q.coeffs:
        raise InvalidArgumentError("candidate set needs two nonempty approximations")
    if p.cfg.kind is not q.cfg.kind:
        raise InvalidArgumentError(f"group mismatch: {p.cfg.kind.value} vs {q.cfg.kind.value}")
    stab = stab or p.cfg.stabilizer
    gammas, deltas, pis = p.params_array(), q.params_array(), stab.as_array()
    # axes (j, pi, i)
    inner = compose_arrays(pis[None, :, None, :], inverse_arrays(gammas)[None, None, :, :])
    etas = compose_arrays(deltas[:, None, None, :], inner)
    jj, pp, ii = np.meshgrid(np.arange(len(deltas)), np.arange(len(pis)), np.arange(len(gammas)), indexing="ij")
    etas = etas.reshape(-1, 4)
    keep = _dedup_mask(etas, DEDUP_TOL)
    return CandidateSet(etas[keep], ii.ravel()[keep], jj.ravel()[keep], pis[pp.ravel()[keep]], len(etas))


# --- objective ------------------------------------------------------------------

def _require_gaussian(p: SparseApprox):
    if p.cfg.mother.kind is not MotherKind.GAUSSIAN:
        raise InvalidArgumentError("the plane objective needs a Gaussian mother function")


def plane_cross(etas: np.ndarray, p: SparseApprox, target_params: np.ndarray, target_weights: np.ndarray) -> np.ndarray:
    """<U(eta) p, t> for every eta row, t = sum_j v_j U(delta_j) phi."""
    _require_gaussian(p)
    etas = np.atleast_2d(etas)
    gammas, w = p.params_array(), p.weights
    per_block = max(1, PLANE_CHUNK // max(1, len(gammas) * len(target_params)))
    out = np.empty(len(etas))
    for lo in range(0, len(etas), per_block):
        moved = compose_arrays(etas[lo:lo + per_block, None, :], gammas[None, :, :])
        ip = gaussian_inner_products(moved[:, :, None, :], target_params[None, None, :, :], p.cfg.nu)
        out[lo:lo + per_block] = np.einsum("nij,i,j->n", ip, w, target_weights)
    return out


def plane_energy(p: SparseApprox) -> float:
    g = p.params_array()
    ip = gaussian_inner_products(g[:, None, :], g[None, :, :], p.cfg.nu)
    return float(p.weights @ ip @ p.weights)


def objective_values(p: SparseApprox, q: SparseApprox, etas: np.ndarray,
                     objective: Objective = Objective.PLANE) -> np.ndarray:
    """||U(eta) p - q||_2 for every row of a (n, 4) array."""
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    if objective is Objective.PLANE:
        sq = (plane_energy(p) + plane_energy(q)
              - 2.0 * plane_cross(etas, p, q.params_array(), q.weights))
        return np.sqrt(np.maximum(sq, 0.0))
    target = synthesize(q).pixels
    moved = compose_arrays(etas[:, None, :], p.params_array()[None, :, :])
    patterns = render_patterns(moved, p.weights, p.cfg)
    return np.sqrt(np.sum((patterns - target) ** 2, axis=(1, 2)))


# --- descent ------------------------------------------------------------------

def to_coords(eta: TransformParams, kind: GroupKind) -> np.ndarray:
    if kind is GroupKind.TRANSLATION:
        return np.array([eta.bx, eta.by])
    if kind is GroupKind.SE2:
        return np.array([eta.bx, eta.by, eta.theta])
    return np.array([eta.bx, eta.by, math.log(eta.a), eta.theta])


def coords_to_params(tau: np.ndarray, kind: GroupKind) -> np.ndarray:
    """(n, P) descent coordinates -> (n, 4) parameter rows."""
    tau = np.atleast_2d(tau)
    out = np.zeros((len(tau), 4))
    out[:, :2] = tau[:, :2]
    out[:, 2] = np.exp(tau[:, 2]) if kind is GroupKind.SIM2 else 1.0
    if kind is GroupKind.SE2:
        out[:, 3] = tau[:, 2]
    elif kind is GroupKind.SIM2:
        out[:, 3] = tau[:, 3]
    return out


def fd_steps(kind: GroupKind, rcfg: RefinementConfig) -> np.ndarray:
    if kind is GroupKind.TRANSLATION:
        return np.array([rcfg.fd_translation] * 2)
    if kind is GroupKind.SE2:
        return np.array([rcfg.fd_translation] * 2 + [rcfg.fd_rotation])
    return np.array([rcfg.fd_translation] * 2 + [rcfg.fd_log_scale, rcfg.fd_rotation])


class PatternModel(ABC):
    """
    J(eta) = ||S(eta) - target||^2 through inner products of transformed
    patterns S(eta). `gram(etas)` returns <S(eta_a), S(eta_b)>, `cross(etas)`
    returns <S(eta), target>.
    """
    target_energy: float = 0.0

    @abstractmethod
    def gram(self, etas: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def cross(self, etas: np.ndarray) -> np.ndarray:
        ...

    def values(self, etas: np.ndarray) -> np.ndarray:
        g = np.diag(self.gram(etas)) if len(etas) > 1 else self.gram(etas).ravel()
        return np.maximum(g - 2.0 * self.cross(etas) + self.target_energy, 0.0)


class PlaneModel(PatternModel):
    def __init__(self, p: SparseApprox, q: SparseApprox):
        _require_gaussian(p)
        self.p, self.q = p, q
        self.energy = plane_energy(p)
        self.target_energy = plane_energy(q)

    def gram(self, etas):
        etas = np.atleast_2d(etas)
        g = self.p.params_array()
        moved = compose_arrays(etas[:, None, :], g[None, :, :])                     # (n, K, 4)
        ip = gaussian_inner_products(moved[:, None, :, None, :], moved[None, :, None, :, :], self.p.cfg.nu)
        return np.einsum("abij,i,j->ab", ip, self.p.weights, self.p.weights)

    def values(self, etas):
        etas = np.atleast_2d(etas)
        return np.maximum(self.energy - 2.0 * self.cross(etas) + self.target_energy, 0.0)

    def cross(self, etas):
        return plane_cross(etas, self.p, self.q.params_array(), self.q.weights)


class RasterModel(PatternModel):
    """Patterns given by a rendering callback on a common raster."""

    def __init__(self, render: Callable[[np.ndarray], np.ndarray], target: np.ndarray):
        self.render = render
        self.target = np.asarray(target, dtype=float).ravel()
        self.target_energy = float(self.target @ self.target)

    def _flat(self, etas):
        return self.render(np.atleast_2d(etas)).reshape(len(np.atleast_2d(etas)), -1)

    def gram(self, etas):
        x = self._flat(etas)
        return x @ x.T

    def cross(self, etas):
        return self._flat(etas) @ self.target

    def values(self, etas):
        x = self._flat(etas) - self.target
        return np.sum(x ** 2, axis=1)


def pattern_model(p: SparseApprox, q: SparseApprox, objective: Objective) -> PatternModel:
    if objective is Objective.PLANE:
        return PlaneModel(p, q)
    gammas = p.params_array()
    render = lambda etas: render_patterns(compose_arrays(etas[:, None, :], gammas[None, :, :]), p.weights, p.cfg)
    return RasterModel(render, synthesize(q).pixels)


def riemannian_descent(model: PatternModel, start: TransformParams, kind: GroupKind,
                       rcfg: Optional[RefinementConfig] = None) -> RefinementResult:
    """
    tau <- tau - w G^-1 grad J, with grad J by central differences and G the
    Gram matrix of the pattern's parameter partials (ridge-regularized); w by
    Armijo backtracking, so J never increases.
    """
    rcfg = rcfg or RefinementConfig()
    h = fd_steps(kind, rcfg)
    dim = len(h)
    tau = to_coords(start, kind)
    J = float(model.values(coords_to_params(tau, kind))[0])
    trace, fallback, it = [J], False, 0

    for it in range(1, rcfg.max_iters + 1):
        stencil = np.concatenate([tau + np.diag(h), tau - np.diag(h)])
        params = coords_to_params(stencil, kind)
        gram = model.gram(params)
        cross = model.cross(params)
        vals = np.maximum(np.diag(gram) - 2.0 * cross + model.target_energy, 0.0)
        grad = (vals[:dim] - vals[dim:]) / (2.0 * h)
        # G_kl = <dS/dk, dS/dl> with dS/dk = (S(+k) - S(-k)) / 2h_k
        pp, pm, mm = gram[:dim, :dim], gram[:dim, dim:], gram[dim:, dim:]
        metric = (pp - pm - pm.T + mm) / np.outer(2.0 * h, 2.0 * h)
        metric = metric + rcfg.ridge * (np.trace(metric) / dim + 1e-12) * np.eye(dim)
        try:
            direction = -linalg.solve(metric, grad, assume_a="pos")
            if not np.all(np.isfinite(direction)):
                raise linalg.LinAlgError("non-finite direction")
        except (linalg.LinAlgError, ValueError):
            if not fallback:
                logger.warning("⚠️ Singular metric, falling back to the identity metric")
            fallback = True
            direction = -grad
        slope = float(grad @ direction)
        if not slope < 0.0:
            break
        w, accepted = rcfg.initial_step, None
        for _ in range(rcfg.max_backtracks):
            trial = tau + w * direction
            J_trial = float(model.values(coords_to_params(trial, kind))[0])
            if J_trial <= J + rcfg.sufficient_decrease * w * slope:
                accepted = (trial, J_trial)
                break
            w *= rcfg.shrink
        if accepted is None:
            break
        gain = J - accepted[1]
        tau, J = accepted
        trace.append(J)
        if gain <= rcfg.tol * max(1.0, J):
            break

    eta = TransformParams.from_array(coords_to_params(tau, kind)[0])
    return RefinementResult(eta, math.sqrt(J), tuple(trace), it, fallback)


def refine(p: SparseApprox, q: SparseApprox, eta_start: TransformParams,
           rcfg: Optional[RefinementConfig] = None, objective: Objective = Objective.PLANE) -> tuple:
    """Local refinement of ||U(eta) p - q||; returns (eta, value)."""
    result = riemannian_descent(pattern_model(p, q, objective), eta_start, p.cfg.kind, rcfg)
    return result.eta, result.value


def register(p: SparseApprox, q: SparseApprox, refine: bool = False,
             rcfg: Optional[RefinementConfig] = None,
             objective: Objective = Objective.PLANE) -> RegistrationResult:
    start = time.time()
    objective = Objective(objective)
    cs = candidate_set(p, q)
    values = objective_values(p, q, cs.etas, objective)
    best = float(values.min())
    tied = np.flatnonzero(values <= best + TIE_TOL)
    pick = min(tied, key=lambda k: distance_from_identity(TransformParams.from_array(cs.etas[k])))
    eta_hat = TransformParams.from_array(cs.etas[pick])
    result = RegistrationResult(eta_hat, best, cs, values, objective=objective)
    logger.debug(f"🎯 Register: {len(cs)} candidates (raw {cs.raw_count}), d_a={best:.5g} "
                f"⏱️ {time.time() - start:.2f}s")
    if not refine:
        return result

    start = time.time()
    ref = riemannian_descent(pattern_model(p, q, objective), eta_hat, p.cfg.kind, rcfg)
    logger.debug(f"🔧 Refine: {best:.5g} -> {ref.value:.5g} in {ref.iterations} iterations "
                f"⏱️ {time.time() - start:.2f}s")
    return RegistrationResult(eta_hat, best, cs, values, True, ref.eta, ref.value,
                              ref.metric_fallback, objective)


def transformation_error(eta_hat: TransformParams, eta_true: TransformParams, period: float = math.pi) -> tuple:
    """(||b_hat - b||, |a_hat - a|, rotation gap in degrees folded by `period`)."""
    trans = math.hypot(eta_hat.bx - eta_true.bx, eta_hat.by - eta_true.by)
    scale = abs(eta_hat.a - eta_true.a)
    rot = math.degrees(angle_difference(eta_hat.theta, eta_true.theta, period))
    return trans, scale, rot
