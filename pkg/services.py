"""
Services partagés par la CLI et le serveur HTTP : approximation, recalage,
distances et analyse du dictionnaire. Chaque appel journalise sa durée.
"""
import logging
import os
import time
from typing import Optional, Sequence

import pandas as pd

from analysis import (OracleGrid, RhoGrid, box_rli_constants, estimate_rho, gram_spectrum, oracle_distance,
                      registration_error_bound, rli_falsify)
from baselines import TangentFit, euclidean_distance, gd_distance, tangent_fit
from dictionary import DictionaryConfig, MotherFunction, MotherKind, coherence, default_config, get_dictionary
from errors import InvalidArgumentError
from fixtures import box_atoms
from geometry import TransformParams
from harness import ExperimentSpec, approximate, fit_dictionary, run_experiment, sparse_distance
from imaging import Image
from registration import Objective, RefinementConfig, RegistrationResult, register
from sparse import SparseApprox, nmp

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_K = int(os.getenv("SPARSEREG_DEFAULT_K", "10"))
MAX_ANALYSIS_ATOMS = int(os.getenv("SPARSEREG_MAX_ANALYSIS_ATOMS", "2000"))


def atoms_to_records(approx: SparseApprox) -> list:
    return [{"c": c, "bx": g.bx, "by": g.by, "a": g.a, "theta": g.theta, "norm": n}
            for c, g, n in zip(approx.coeffs, approx.supports, approx.norms)]


def records_to_atoms(records: Sequence[dict], cfg: DictionaryConfig) -> SparseApprox:
    """`norm` is optional; unless every record carries it, in-domain norms are recomputed."""
    try:
        supports = tuple(TransformParams(float(r["bx"]), float(r["by"]), float(r.get("a", 1.0)),
                                         float(r.get("theta", 0.0))) for r in records)
        coeffs = tuple(float(r["c"]) for r in records)
        norms = [r.get("norm") for r in records]
        norms = tuple(float(n) for n in norms) if records and None not in norms else None
    except (KeyError, TypeError) as e:
        raise InvalidArgumentError(f"atom records need c, bx, by (and optionally a, theta): {e}") from e
    return SparseApprox(coeffs, supports, cfg, norms)


class ApproximationService:
    def __init__(self, cfg: Optional[DictionaryConfig] = None):
        self.cfg = cfg or default_config()
        logger.info(f"Approximation dictionary: {self.cfg.kind.value}, nu={self.cfg.nu:g}, "
                    f"{self.cfg.width}x{self.cfg.height}")

    def approximate(self, img: Image, K: int = DEFAULT_K, stop_threshold: float = 0.0,
                    cfg: Optional[DictionaryConfig] = None) -> tuple:
        """NMP on the image's raster; returns (SparseApprox, residual trace)."""
        start = time.time()
        cfg = fit_dictionary(cfg or self.cfg, img)
        approx, trace = nmp(img, K, get_dictionary(cfg), stop_threshold)
        logger.info(f"🧩 Approximation: {len(approx)} atoms, ||r|| {trace[0]:.4g} -> {trace[-1]:.4g} "
                    f"⏱️ {time.time() - start:.2f}s")
        return approx, trace


class RegistrationService:
    def __init__(self, rcfg: Optional[RefinementConfig] = None):
        self.rcfg = rcfg or RefinementConfig()

    def register(self, p: SparseApprox, q: SparseApprox, refine: bool = False,
                 objective: Objective = Objective.PLANE) -> RegistrationResult:
        start = time.time()
        result = register(p, q, refine=refine, rcfg=self.rcfg, objective=objective)
        msg = f"🎯 Registration: {len(result.candidates)} candidates, d_a={result.d_a:.5g}"
        if result.refined:
            msg += f", refined {result.d_refined:.5g}"
        logger.info(f"{msg} ⏱️ {time.time() - start:.2f}s")
        return result


class DistanceService:
    """Transformation-invariant distances between two images, one method at a time."""

    def __init__(self, cfg: Optional[DictionaryConfig] = None, rcfg: Optional[RefinementConfig] = None):
        self.cfg = cfg or default_config()
        self.rcfg = rcfg or RefinementConfig()

    def distance(self, img1: Image, img2: Image, method: str = "sparse", K: int = DEFAULT_K,
                 refine: bool = False, objective: Objective = Objective.RASTER) -> tuple:
        """(distance, eta or None)."""
        start = time.time()
        kind = self.cfg.kind
        if method == "euclid":
            result = euclidean_distance(img1, img2), None
        elif method == "tangent":
            result = self.tangent(img1, img2).distance, None
        elif method == "gd":
            result = gd_distance(img1, img2, self.rcfg, kind)
        elif method == "sparse":
            p = approximate(img1, K, self.cfg)
            q = approximate(img2, K, self.cfg)
            result = sparse_distance(p, q, refine, self.rcfg, objective)
        else:
            raise InvalidArgumentError(f"unknown method '{method}', expected euclid, tangent, gd or sparse")
        logger.info(f"📏 {method} distance {result[0]:.5g} ⏱️ {time.time() - start:.2f}s")
        return result

    def tangent(self, img1: Image, img2: Image) -> TangentFit:
        """Tangent distance with the rank of the joint solve, flagged when the tangent planes degenerate."""
        return tangent_fit(img1, img2, self.cfg.kind, self.rcfg)


class AnalysisService:
    def rho(self, cfg: DictionaryConfig, grid: Optional[RhoGrid] = None, refine_local: bool = True) -> pd.DataFrame:
        est = estimate_rho(cfg, grid=grid, refine_local=refine_local)
        return pd.DataFrame([{
            "group": cfg.kind.value, "nu": cfg.nu, "rho": est.rho, "refined": est.refined,
            "eta": est.eta.to_text(), "eta_prime": est.eta_prime.to_text(),
            "pi": est.pi.to_text(), "gamma": est.gamma.to_text(),
        }])

    def rho_sweep(self, cfg: DictionaryConfig, nu_values: Sequence[float], grid: Optional[RhoGrid] = None,
                  refine_local: bool = True) -> pd.DataFrame:
        start = time.time()
        frames = [self.rho(cfg.with_(mother=MotherFunction(nu=nu)), grid, refine_local) for nu in nu_values]
        logger.info(f"📐 rho sweep over {len(nu_values)} values ⏱️ {time.time() - start:.2f}s")
        return pd.concat(frames, ignore_index=True)

    def _atoms(self, cfg: DictionaryConfig, limit: int) -> list:
        if cfg.mother.kind is MotherKind.BOX:
            return box_atoms(cfg.width - cfg.mother.length + 1, cfg.mother.length)
        dico = get_dictionary(cfg)
        if len(dico) > limit:
            logger.warning(f"⚠️ Dictionary has {len(dico)} atoms, analysing the first {limit}")
        return list(dico.atoms(limit))

    def rli(self, cfg: DictionaryConfig, K: int, epsilon: float, alpha: Optional[float] = None,
            trials: int = 1000, seed: int = 0, limit: int = MAX_ANALYSIS_ATOMS) -> pd.DataFrame:
        """Falsification run; alpha defaults to the analytic box constant for box dictionaries."""
        if alpha is None:
            if cfg.mother.kind is not MotherKind.BOX:
                raise InvalidArgumentError("alpha is required outside box dictionaries")
            alpha, _ = box_rli_constants(K, epsilon)
        atoms = self._atoms(cfg, limit)
        report = rli_falsify(atoms, K, epsilon, alpha, trials, seed)
        return pd.DataFrame([{
            "K": report.K, "epsilon": report.epsilon, "alpha": report.alpha, "alpha_found": report.alpha_found,
            "violated": report.violated, "trials": report.trials, "premise_hits": report.premise_hits,
            "witness_coeffs": " ".join(f"{c:.10g}" for c in report.witness_coeffs),
            "witness_supports": ";".join(g.to_text() for g in report.witness_supports),
        }])

    def coherence(self, cfg: DictionaryConfig, K: Optional[int] = None,
                  limit: int = MAX_ANALYSIS_ATOMS) -> pd.DataFrame:
        """Coherence of the (first `limit`) atoms, plus lambda_min of the first K when K is given."""
        start = time.time()
        atoms = self._atoms(cfg, limit)
        row = {"atoms": len(atoms), "coherence": coherence(atoms)}
        if K is not None:
            row.update({"K": K, "lambda_min": gram_spectrum(atoms[:K])})
        logger.info(f"🔗 Coherence {row['coherence']:.4g} over {len(atoms)} atoms ⏱️ {time.time() - start:.2f}s")
        return pd.DataFrame([row])

    def bound(self, p: SparseApprox, q: SparseApprox, grid: Optional[OracleGrid] = None,
              rho_grid: Optional[RhoGrid] = None) -> dict:
        """
        Oracle distance and the empirical bound on d_a - d for one instance.
        With `rho_grid`, the bound is also reported with the inconsistency
        estimated over the whole dictionary.
        """
        d, eta0 = oracle_distance(p, q, grid)
        rho_dictionary = estimate_rho(p.cfg, grid=rho_grid, refine_local=False).rho if rho_grid is not None else None
        report = registration_error_bound(p, q, d, eta0, rho_dictionary=rho_dictionary)
        return {"d": d, "eta0": eta0.to_text(), "d_a": report.d_a, "error": report.error,
                "alpha_hat": report.alpha_hat, "rho_hat": report.rho_hat, "bound": report.bound,
                "holds": report.holds, "rho_dictionary": rho_dictionary,
                "bound_dictionary": report.bound_dictionary, "holds_dictionary": report.holds_dictionary}


class ExperimentService:
    def run(self, spec: ExperimentSpec) -> pd.DataFrame:
        start = time.time()
        frame = run_experiment(spec)
        logger.info(f"⏱️ Experiment {spec.experiment}: {time.time() - start:.2f}s, {len(frame)} rows")
        return frame
