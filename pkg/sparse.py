"""
Non-negative Matching Pursuit and the sparse expansions p = sum c_i phi_gamma_i.
"""
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import pandas as pd

from dictionary import Dictionary, DictionaryConfig, get_dictionary, in_domain_norms, render_plane, RENDER_CHUNK
from errors import DataError, InvalidArgumentError
from geometry import TransformParams, compose
from imaging import Image

logger = logging.getLogger(__name__)

# Configuration
TIE_TOL = 1e-12
CSV_COLUMNS = ["c", "bx", "by", "a", "theta"]
NORM_COLUMN = "norm"


@dataclass(frozen=True, eq=False)
class SparseApprox:
    """
    Coefficients and supports of a pattern. `norms[i]` is the in-domain norm
    of the plane-normalized atom gamma_i at the time it was selected; the
    atom's weight against unit-plane atoms is c_i / norms[i], and it is kept
    when the support moves so occluded atoms lose their out-of-domain energy.
    """
    coeffs: tuple
    supports: tuple
    cfg: DictionaryConfig
    norms: Optional[tuple] = None
    occluded: tuple = field(default=())

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        supports = tuple(self.supports)
        if len(coeffs) != len(supports):
            raise InvalidArgumentError(f"{len(coeffs)} coefficients for {len(supports)} supports")
        if any(not (math.isfinite(c) and c > 0.0) for c in coeffs):
            raise InvalidArgumentError("coefficients must be strictly positive")
        for gamma in supports:
            gamma.validate_for(self.cfg.kind)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "supports", supports)
        if self.norms is None:
            norms = tuple(float(n) for n in in_domain_norms(self.params_array(), self.cfg)) if supports else ()
            object.__setattr__(self, "norms", norms)
        elif len(self.norms) != len(coeffs):
            raise InvalidArgumentError("norms and coefficients differ in length")
        if any(n <= 0.0 for n in self.norms):
            raise InvalidArgumentError("an atom of the approximation has no energy in the domain")
        if not self.occluded:
            object.__setattr__(self, "occluded", (False,) * len(coeffs))

    @classmethod
    def empty(cls, cfg: DictionaryConfig) -> "SparseApprox":
        return cls((), (), cfg)

    def __len__(self) -> int:
        return len(self.coeffs)

    @property
    def K(self) -> int:
        return len(self.coeffs)

    @property
    def weights(self) -> np.ndarray:
        return np.array(self.coeffs) / np.array(self.norms) if self.coeffs else np.zeros(0)

    @property
    def l1(self) -> float:
        return float(np.sum(self.weights))

    def params_array(self) -> np.ndarray:
        if not self.supports:
            return np.zeros((0, 4))
        return np.array([g.as_array() for g in self.supports])

    def concat(self, other: "SparseApprox") -> "SparseApprox":
        if (other.cfg.width, other.cfg.height) != (self.cfg.width, self.cfg.height):
            raise InvalidArgumentError("cannot concatenate approximations on different rasters")
        return SparseApprox(self.coeffs + other.coeffs, self.supports + other.supports, self.cfg,
                            self.norms + other.norms, self.occluded + other.occluded)

    def to_frame(self) -> pd.DataFrame:
        rows = [(c, g.bx, g.by, g.a, g.theta, n) for c, g, n in zip(self.coeffs, self.supports, self.norms)]
        return pd.DataFrame(rows, columns=CSV_COLUMNS + [NORM_COLUMN])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, cfg: DictionaryConfig) -> "SparseApprox":
        """Without a complete `norm` column the in-domain norms are recomputed on cfg's raster."""
        missing = set(CSV_COLUMNS) - set(frame.columns)
        if missing:
            raise DataError(f"approximation table lacks columns {sorted(missing)}")
        supports = tuple(TransformParams(r.bx, r.by, r.a, r.theta) for r in frame.itertuples())
        norms = None
        if NORM_COLUMN in frame.columns and frame[NORM_COLUMN].notna().all():
            norms = tuple(float(n) for n in frame[NORM_COLUMN])
        return cls(tuple(frame["c"]), supports, cfg, norms)

    def save_csv(self, path: str):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.12g")

    @classmethod
    def load_csv(cls, path: str, cfg: DictionaryConfig) -> "SparseApprox":
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataError(f"cannot read approximation {path}: {e}") from e
        return cls.from_frame(frame, cfg)


def _check_raster(img: Image, cfg: DictionaryConfig):
    if (img.width, img.height) != (cfg.width, cfg.height):
        raise InvalidArgumentError(f"image is {img.width}x{img.height}, dictionary is {cfg.width}x{cfg.height}")


def nmp(img: Image, K: int, cfg: Union[DictionaryConfig, Dictionary], stop_threshold: float = 0.0) -> tuple:
    """
    Non-negative Matching Pursuit. Returns (SparseApprox, residual norm trace);
    the trace starts with ||img||. Stops after K selections, when the best
    correlation is <= 0, or when ||r|| <= stop_threshold. Re-selected atoms are
    merged by summing their coefficients.
    """
    if K < 1:
        raise InvalidArgumentError(f"K must be >= 1, got {K}")
    if stop_threshold < 0:
        raise InvalidArgumentError(f"stop threshold must be >= 0, got {stop_threshold}")
    dico = cfg if isinstance(cfg, Dictionary) else get_dictionary(cfg)
    _check_raster(img, dico.cfg)
    start = time.time()

    residual = np.array(img.pixels, dtype=float)
    trace = [float(np.linalg.norm(residual))]
    picked = {}  # lattice index -> [coeff, gamma, in-domain norm]
    for _ in range(K):
        if trace[-1] <= stop_threshold:
            break
        corr = dico.correlations(residual)
        best = corr.max()
        if best <= 0.0:
            break
        # argwhere walks (shape, y, x) in C order, i.e. (a, theta, by, bx) ascending
        s, iy, ix = (int(v) for v in np.argwhere(corr >= best - TIE_TOL)[0])
        gamma = dico.params_at(s, iy, ix)
        plane = render_plane(gamma.as_array(), dico.cfg)[0]
        norm = float(np.linalg.norm(plane))
        atom = plane / norm
        c = float(np.sum(residual * atom))
        if c <= 0.0:
            break
        residual -= c * atom
        trace.append(float(np.linalg.norm(residual)))
        entry = picked.setdefault((s, iy, ix), [0.0, gamma, norm])
        entry[0] += c

    approx = SparseApprox(tuple(v[0] for v in picked.values()), tuple(v[1] for v in picked.values()),
                          dico.cfg, tuple(v[2] for v in picked.values()))
    logger.debug(f"🧩 NMP: {len(approx)} atoms, ||r|| {trace[0]:.4g} -> {trace[-1]:.4g} "
                f"⏱️ {time.time() - start:.2f}s")
    return approx, trace


def render_patterns(params: np.ndarray, weights: np.ndarray, cfg: DictionaryConfig) -> np.ndarray:
    """
    Sum_i w_i * plane raster of params[n, i] for every row n of a (n, K, 4)
    array; returns (n, H, W). Rendered in blocks to bound memory.
    """
    params = np.asarray(params, dtype=float)
    n, k = params.shape[:2]
    out = np.zeros((n, cfg.height, cfg.width))
    if k == 0:
        return out
    per_block = max(1, RENDER_CHUNK // (k * cfg.width * cfg.height))
    for lo in range(0, n, per_block):
        block = params[lo:lo + per_block]
        rasters = render_plane(block.reshape(-1, 4), cfg).reshape(len(block), k, cfg.height, cfg.width)
        out[lo:lo + per_block] = np.einsum("nkhw,k->nhw", rasters, weights)
    return out


def synthesize(approx: SparseApprox) -> Image:
    cfg = approx.cfg
    if not approx.coeffs:
        return Image.zeros(cfg.width, cfg.height)
    return Image(render_patterns(approx.params_array()[None], approx.weights, cfg)[0])


def transform_approx(approx: SparseApprox, eta: TransformParams) -> SparseApprox:
    """Same coefficients and gains, supports eta o gamma_i; occluded atoms are flagged."""
    supports = tuple(compose(eta, g, approx.cfg.kind) for g in approx.supports)
    if not supports:
        return approx
    moved = in_domain_norms(np.array([g.as_array() for g in supports]), approx.cfg)
    occluded = tuple(bool(m < 0.99 * n) for m, n in zip(moved, approx.norms))
    if any(occluded):
        escaped = int(np.sum(moved ** 2 < 1e-12))
        logger.warning(f"⚠️ {sum(occluded)} transformed atoms partly outside the domain ({escaped} fully)")
    return SparseApprox(approx.coeffs, supports, approx.cfg, approx.norms, occluded)
