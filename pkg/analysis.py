"""
Dictionary-property estimators and oracles: transformation inconsistency,
robust-linear-independence falsification, box-dictionary constants, the
brute-force invariant-distance oracle and the empirical bound report.
"""
import logging
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize

from dictionary import Atom, DictionaryConfig, MotherKind, admissible_scales, gaussian_inner_products, lattice_array
from errors import EmptyGridError, GridTooLargeError, InvalidArgumentError
from geometry import (GroupKind, Stabilizer, TransformParams, TWO_PI, compose, compose_arrays, inverse,
                      inverse_arrays)
from imaging import image_center
from registration import (Objective, PlaneModel, RefinementConfig, coords_to_params, objective_values,
                          register, riemannian_descent, to_coords)
from sparse import SparseApprox

logger = logging.getLogger(__name__)

# Configuration
RHO_CHUNK = 2_000_000
PREMISE_TOL = 1e-12


@dataclass(frozen=True)
class RhoGrid:
    """Sweep of mu = eta'^-1 o eta around the identity, and of the atoms sampled."""
    translation_radius: float = 8.0
    translation_step: float = 1.0
    rotation_radius: float = math.pi / 2
    rotation_step: float = math.pi / 16
    log_scale_radius: float = 0.5       # octaves
    log_scale_step: float = 0.25        # octaves
    gamma_limit: int = 500
    gamma_radius: float = 12.0          # pixels around the raster center
    eta_prime_limit: int = 4
    denominator_floor: float = 1e-3
    seed: int = 0

    def mu_grid(self, kind: GroupKind, stab: Stabilizer) -> np.ndarray:
        def axis(radius, step):
            if radius <= 0 or step <= 0:
                return np.zeros(1)
            n = int(math.floor(radius / step + 1e-9))
            return np.arange(-n, n + 1) * step

        t = axis(self.translation_radius, self.translation_step)
        r = axis(self.rotation_radius, self.rotation_step) if kind.has_rotation else np.zeros(1)
        s = 2.0 ** axis(self.log_scale_radius, self.log_scale_step) if kind.has_scale else np.ones(1)
        bx, by, a, th = np.meshgrid(t, t, s, r, indexing="ij")
        mu = np.stack([bx.ravel(), by.ravel(), a.ravel(), np.mod(th.ravel(), TWO_PI)], axis=1)
        keep = np.ones(len(mu), dtype=bool)
        for pi in stab.as_array():
            dth = np.abs(mu[:, 3] - pi[3]) % TWO_PI
            same = (np.abs(mu[:, :3] - pi[:3]).max(axis=1) < 1e-12) & (np.minimum(dth, TWO_PI - dth) < 1e-12)
            keep &= ~same
        return mu[keep]


@dataclass(frozen=True)
class RhoEstimate:
    rho: float
    eta: TransformParams
    eta_prime: TransformParams
    pi: TransformParams
    gamma: TransformParams
    grid: RhoGrid
    refined: bool = False


@dataclass(frozen=True)
class RliReport:
    """
    alpha_found is the worst (largest) smallest-pair-cancellation measure met
    among directions where the premise ||sum a_i v_i|| < eps ||a|| fired; it
    lower-bounds the alpha the atoms actually need.
    """
    K: int
    epsilon: float
    alpha: float
    alpha_found: float
    violated: bool
    trials: int
    premise_hits: int
    witness_coeffs: tuple
    witness_indices: tuple
    witness_supports: tuple


@dataclass(frozen=True)
class OracleGrid:
    translation_radius: float = 6.0
    translation_step: float = 1.0
    rotation_step: float = math.pi / 16
    log_scale_radius: float = 1.0       # octaves
    log_scale_step: float = 0.25
    max_points: int = 1_000_000
    refine_top: int = 3


@dataclass(frozen=True)
class BoundReport:
    alpha_hat: float
    rho_hat: float
    l1_p: float
    l1_q: float
    bound: float
    d_a: float
    d: float
    rho_dictionary: Optional[float] = None

    @property
    def error(self) -> float:
        return self.d_a - self.d

    @property
    def holds(self) -> bool:
        return self.error <= self.bound + 1e-6

    @property
    def bound_dictionary(self) -> Optional[float]:
        """Same bound with the dictionary-wide inconsistency instead of the one fitted on this pair."""
        if self.rho_dictionary is None:
            return None
        return self.alpha_hat * self.rho_dictionary * min(self.l1_p, self.l1_q)

    @property
    def holds_dictionary(self) -> Optional[bool]:
        if self.rho_dictionary is None:
            return None
        return self.error <= self.bound_dictionary + 1e-6


# --- transformation inconsistency -------------------------------------------

def _require_gaussian(cfg: DictionaryConfig):
    if cfg.mother.kind is not MotherKind.GAUSSIAN:
        raise InvalidArgumentError("inconsistency estimation needs a Gaussian mother function")


def _atom_distance(params1: np.ndarray, params2: np.ndarray, nu: float) -> np.ndarray:
    return np.sqrt(np.maximum(2.0 - 2.0 * gaussian_inner_products(params1, params2, nu), 0.0))


def _rho_ratios(mu: np.ndarray, eta_prime: np.ndarray, pis: np.ndarray, gammas: np.ndarray,
                nu: float, floor: float) -> tuple:
    """
    For each mu row: inf over pi of sup over gamma of
    ||U(eta' mu pi eta'^-1 gamma) phi - U(gamma) phi|| / ||U(mu) phi - phi||.
    Returns (ratio, argmin pi, argmax gamma); rows under the floor get -inf.
    """
    eta = compose_arrays(eta_prime[None, :], mu)
    back = inverse_arrays(eta_prime)
    nums, args = [], []
    for pi in pis:
        zeta = compose_arrays(compose_arrays(eta, pi[None, :]), back[None, :])
        moved = compose_arrays(zeta[:, None, :], gammas[None, :, :])
        dist = _atom_distance(moved, gammas[None, :, :], nu)
        nums.append(dist.max(axis=1))
        args.append(dist.argmax(axis=1))
    nums, args = np.stack(nums), np.stack(args)
    best_pi = nums.argmin(axis=0)
    num = nums[best_pi, np.arange(len(mu))]
    den = _atom_distance(mu, np.array([0.0, 0.0, 1.0, 0.0])[None, :], nu)
    ratio = np.where(den >= floor, num / np.maximum(den, floor), -np.inf)
    return ratio, best_pi, args[best_pi, np.arange(len(mu))]


def _sample_sets(cfg: DictionaryConfig, grid: RhoGrid) -> tuple:
    rng = np.random.default_rng(grid.seed)
    lattice = lattice_array(cfg, admissible_scales(cfg, warn=False))
    cx, cy = image_center(cfg.width, cfg.height)
    xs, ys = cfg.translations_x, cfg.translations_y
    ox, oy = float(xs[np.argmin(np.abs(xs - cx))]), float(ys[np.argmin(np.abs(ys - cy))])

    shapes = np.unique(lattice[:, 2:], axis=0)
    primes = np.column_stack([np.full(len(shapes), ox), np.full(len(shapes), oy), shapes])
    if len(primes) > grid.eta_prime_limit:
        # keep the unit-scale, zero-angle element and sample the rest
        rest = rng.choice(np.arange(1, len(primes)), size=grid.eta_prime_limit - 1, replace=False)
        primes = primes[np.concatenate([[0], np.sort(rest)])]

    near = lattice[np.hypot(lattice[:, 0] - ox, lattice[:, 1] - oy) <= grid.gamma_radius]
    if len(near) > grid.gamma_limit:
        near = near[np.sort(rng.choice(len(near), size=grid.gamma_limit, replace=False))]
    return primes, np.concatenate([near, primes])


def estimate_rho(cfg: DictionaryConfig, stab: Optional[Stabilizer] = None, grid: Optional[RhoGrid] = None,
                 refine_local: bool = True) -> RhoEstimate:
    """
    Sweeps eta = eta' o mu with mu on a fine grid around the identity (mu
    outside S_phi, i.e. eta' outside eta o S_phi) and eta' on lattice
    elements at the raster center, then locally ascends the best mu with
    Nelder-Mead. The result lower-bounds the supremum over the whole group.
    """
    _require_gaussian(cfg)
    start = time.time()
    stab = stab or cfg.stabilizer
    grid = grid or RhoGrid()
    kind, nu, pis = cfg.kind, cfg.nu, stab.as_array()
    mu = grid.mu_grid(kind, stab)
    if len(mu) == 0:
        raise EmptyGridError("inconsistency sweep grid is empty")
    primes, gammas = _sample_sets(cfg, grid)

    best = (-np.inf, None, None, 0, 0)      # ratio, mu row, eta' row, pi index, gamma index
    per_block = max(1, RHO_CHUNK // (len(gammas) * len(pis)))
    for eta_prime in primes:
        for lo in range(0, len(mu), per_block):
            block = mu[lo:lo + per_block]
            ratio, pi_idx, g_idx = _rho_ratios(block, eta_prime, pis, gammas, nu, grid.denominator_floor)
            k = int(np.argmax(ratio))
            if ratio[k] > best[0]:
                best = (float(ratio[k]), block[k], eta_prime, int(pi_idx[k]), int(g_idx[k]))
    if best[1] is None:
        raise EmptyGridError("every grid point falls under the denominator floor")

    rho, mu_best, eta_prime, pi_idx, g_idx = best
    refined = False
    if refine_local:
        def negative_ratio(x):
            row = coords_to_params(x, kind)
            r, _, _ = _rho_ratios(row, eta_prime, pis, gammas, nu, grid.denominator_floor)
            return -float(r[0]) if np.isfinite(r[0]) else 0.0

        res = optimize.minimize(negative_ratio, to_coords(TransformParams.from_array(mu_best), kind),
                                method="Nelder-Mead", options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": 400})
        if -res.fun > rho:
            row = coords_to_params(res.x, kind)
            r, p_i, g_i = _rho_ratios(row, eta_prime, pis, gammas, nu, grid.denominator_floor)
            rho, mu_best, pi_idx, g_idx, refined = float(r[0]), row[0], int(p_i[0]), int(g_i[0]), True

    eta = compose_arrays(eta_prime, mu_best)
    estimate = RhoEstimate(rho, TransformParams.from_array(eta), TransformParams.from_array(eta_prime),
                           TransformParams.from_array(pis[pi_idx]), TransformParams.from_array(gammas[g_idx]),
                           grid, refined)
    logger.info(f"📐 rho({kind.value}, nu={nu:g}) = {rho:.4g} over {len(mu)} x {len(primes)} points, "
                f"{len(gammas)} atoms ⏱️ {time.time() - start:.2f}s")
    return estimate


# --- robust linear independence ---------------------------------------------

def pair_cancellation(gram: np.ndarray, a: np.ndarray, tol: float = 1e-12) -> float:
    """min over pairs (a_i, a_j != 0) of || a_i v_i/||a_i v_i|| + a_j v_j/||a_j v_j|| ||."""
    a = np.asarray(a, dtype=float)
    idx = np.flatnonzero(np.abs(a) > tol)
    if len(idx) < 2:
        return math.inf
    g = gram[np.ix_(idx, idx)]
    n = np.sqrt(np.diag(g))
    s = np.sign(a[idx])
    cos = (s[:, None] * s[None, :]) * g / np.outer(n, n)
    m = np.sqrt(np.maximum(2.0 + 2.0 * cos, 0.0))
    return float(m[np.triu_indices(len(idx), k=1)].min())


def gram_spectrum(atoms: Sequence[Atom]) -> float:
    """Smallest eigenvalue of the atoms' Gram matrix (delta_K = 1 - lambda_min)."""
    x = np.stack([atom.raster.pixels.ravel() for atom in atoms])
    return float(linalg.eigvalsh(x @ x.T)[0])


def rli_falsify(atoms: Sequence[Atom], K: int, epsilon: float, alpha: float, trials: int = 1000,
                seed: int = 0, perturbations: int = 2) -> RliReport:
    """
    Randomized search for a counterexample to (K, epsilon, alpha)-RLI. Each
    trial draws a K-subset with its own seeded generator, tries the
    smallest-eigenvalue direction of the subset Gram matrix plus a few
    perturbations of it, and evaluates the pair measure wherever the premise
    fires.
    """
    if K < 2:
        raise InvalidArgumentError("RLI needs K >= 2 (pair condition)")
    if K > len(atoms):
        raise InvalidArgumentError(f"K={K} exceeds the {len(atoms)} atoms given")
    if not (epsilon > 0 and alpha > 0):
        raise InvalidArgumentError("epsilon and alpha must be positive")
    start = time.time()
    x = np.stack([atom.raster.pixels.ravel() for atom in atoms])
    full_gram = x @ x.T if len(atoms) <= 4000 else None

    worst, hits, witness = 0.0, 0, (None, None)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        idx = np.sort(rng.choice(len(atoms), size=K, replace=False))
        g = full_gram[np.ix_(idx, idx)] if full_gram is not None else x[idx] @ x[idx].T
        _, vecs = linalg.eigh(g)
        directions = [vecs[:, 0]]
        for _ in range(perturbations):
            d = vecs[:, 0] + 0.5 * epsilon * rng.standard_normal(K)
            directions.append(d / np.linalg.norm(d))
        for a in directions:
            if math.sqrt(max(float(a @ g @ a), 0.0)) >= epsilon - PREMISE_TOL:
                continue
            hits += 1
            m = pair_cancellation(g, a)
            if m > worst or witness[0] is None:
                worst, witness = max(worst, m), (a, idx)

    a, idx = witness
    report = RliReport(
        K, epsilon, alpha, worst, worst > alpha, trials, hits,
        tuple(float(v) for v in a) if a is not None else (),
        tuple(int(i) for i in idx) if idx is not None else (),
        tuple(atoms[i].gamma for i in idx) if idx is not None else (),
    )
    logger.info(f"🔍 RLI K={K} eps={epsilon:.3g}: {hits} premise hits, alpha_found={worst:.4g} "
                f"({'violated' if report.violated else 'ok'} at alpha={alpha:.3g}) ⏱️ {time.time() - start:.2f}s")
    return report


def box_rli_constants(K: int, epsilon: float) -> tuple:
    """(alpha, epsilon_max) with alpha = eps sqrt(2/3 (4^K - 1)), epsilon_max = sqrt(3 / (4^K - 1))."""
    if K < 1:
        raise InvalidArgumentError(f"K must be >= 1, got {K}")
    span = 4.0 ** K - 1.0
    eps_max = math.sqrt(3.0 / span)
    if not 0.0 < epsilon < eps_max:
        raise InvalidArgumentError(f"epsilon must lie in (0, {eps_max:.6g}) for K={K}, got {epsilon}")
    return epsilon * math.sqrt(2.0 * span / 3.0), eps_max


# --- brute-force invariant distance -----------------------------------------

def _centroid(approx: SparseApprox) -> np.ndarray:
    w = approx.weights
    return (approx.params_array()[:, :2] * w[:, None]).sum(axis=0) / w.sum()


def oracle_grid(p: SparseApprox, q: SparseApprox, grid: OracleGrid) -> np.ndarray:
    """eta = T(c_q + t) o (a, theta) o T(-c_p) over the grid of (t, a, theta)."""
    kind = p.cfg.kind
    n = int(math.floor(grid.translation_radius / grid.translation_step + 1e-9))
    t = np.arange(-n, n + 1) * grid.translation_step
    thetas = np.arange(0.0, TWO_PI - 1e-12, grid.rotation_step) if kind.has_rotation else np.zeros(1)
    if kind.has_scale:
        m = int(math.floor(grid.log_scale_radius / grid.log_scale_step + 1e-9))
        scales = 2.0 ** (np.arange(-m, m + 1) * grid.log_scale_step)
    else:
        scales = np.ones(1)
    points = len(t) ** 2 * len(thetas) * len(scales)
    if points > grid.max_points:
        raise GridTooLargeError(points, grid.max_points)

    cp, cq = _centroid(p), _centroid(q)
    tx, ty, a, th = (v.ravel() for v in np.meshgrid(t, t, scales, thetas, indexing="ij"))
    c, s = np.cos(th), np.sin(th)
    bx = cq[0] + tx - a * (c * cp[0] - s * cp[1])
    by = cq[1] + ty - a * (s * cp[0] + c * cp[1])
    return np.stack([bx, by, a, th], axis=1)


def oracle_distance(p: SparseApprox, q: SparseApprox, grid: Optional[OracleGrid] = None,
                    rcfg: Optional[RefinementConfig] = None) -> tuple:
    """
    d(p, q) = min over the whole group of ||U(eta) p - q||, by exhaustive grid
    search followed by local refinement of the best grid points, of the best
    feature-pair candidate and of the identity. Returns (d, eta0).
    """
    grid = grid or OracleGrid()
    start = time.time()
    etas = oracle_grid(p, q, grid)
    values = objective_values(p, q, etas, Objective.PLANE)
    order = np.argsort(values, kind="stable")[:grid.refine_top]
    seeds = [TransformParams.from_array(etas[k]) for k in order]
    seeds.append(register(p, q).eta_hat)
    seeds.append(TransformParams.identity())

    model = PlaneModel(p, q)
    best_value, best_eta = math.inf, seeds[0]
    for seed in seeds:
        res = riemannian_descent(model, seed, p.cfg.kind, rcfg)
        if res.value < best_value:
            best_value, best_eta = res.value, res.eta
    logger.info(f"🧭 Oracle: d={best_value:.5g} over {len(etas)} grid points ⏱️ {time.time() - start:.2f}s")
    return best_value, best_eta


# --- empirical bound --------------------------------------------------------

def _bound_side(p: SparseApprox, q: SparseApprox, eta0: TransformParams, stab: Stabilizer) -> tuple:
    nu, kind = p.cfg.nu, p.cfg.kind
    gammas, deltas = p.params_array(), q.params_array()
    moved0 = compose_arrays(eta0.as_array()[None, :], gammas)
    pair = _atom_distance(moved0[:, None, :], deltas[None, :, :], nu)
    i, j = np.unravel_index(int(np.argmin(pair)), pair.shape)
    alpha = float(pair[i, j])

    best_sum, best_err = math.inf, None
    for pi in stab:
        tilde = compose(compose(TransformParams.from_array(deltas[j]), pi, kind),
                        inverse(TransformParams.from_array(gammas[i]), kind), kind)
        err = _atom_distance(compose_arrays(tilde.as_array()[None, :], gammas), moved0, nu)
        total = float(p.weights @ err)
        if total < best_sum:
            best_sum, best_err = total, err
    rho = float(best_err.max() / alpha) if alpha > 1e-12 else 1.0
    return alpha, rho, best_sum


def registration_error_bound(p: SparseApprox, q: SparseApprox, d: float, eta0: TransformParams,
                             stab: Optional[Stabilizer] = None, rho_dictionary: Optional[float] = None) -> BoundReport:
    """
    Compares E = d_a - d with alpha_hat * rho_hat * min(||c||_1, ||d||_1),
    alpha_hat being the distance between the closest pair U(eta0) phi_gamma_i,
    phi_delta_j and rho_hat the inconsistency of the induced candidate over
    the atoms of the instance (both directions). Plane objective throughout.
    `rho_dictionary`, typically estimate_rho(p.cfg).rho, adds the bound taken
    with the inconsistency of the whole dictionary.
    """
    _require_gaussian(p.cfg)
    stab = stab or p.cfg.stabilizer
    kind = p.cfg.kind
    d_a = register(p, q).d_a
    alpha_p, rho_p, sum_p = _bound_side(p, q, eta0, stab)
    alpha_q, rho_q, sum_q = _bound_side(q, p, inverse(eta0, kind), stab)
    alpha, rho = max(alpha_p, alpha_q), max(rho_p, rho_q)
    l1_p, l1_q = p.l1, q.l1
    bound = alpha * rho * min(l1_p, l1_q) if alpha > 1e-12 else min(sum_p, sum_q)
    report = BoundReport(alpha, rho, l1_p, l1_q, bound, d_a, d, rho_dictionary)
    if not report.holds:
        logger.error(f"❌ Bound violated: E={report.error:.5g} > {bound:.5g}")
    else:
        logger.debug(f"E={report.error:.5g} <= {bound:.5g} (alpha={alpha:.4g}, rho={rho:.4g})")
    if report.holds_dictionary is False:
        logger.warning(f"⚠️ Dictionary-level bound {report.bound_dictionary:.5g} below E={report.error:.5g}, "
                       f"rho estimate {rho_dictionary:.4g} under the fitted {rho:.4g}")
    return report
