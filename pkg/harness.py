"""
Pilotes d'expériences : fichiers de config, images synthétiques, balayages
(anisotropie, pas d'échelle), erreurs de transformation, comparaison de
distances, classification de chiffres, et écriture des CSV.
"""
import glob
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from scipy import stats

from baselines import euclidean_distance, gd_distance, tangent_distance
from dictionary import (CONFIG_KEYS, DictionaryConfig, MotherFunction, default_config, get_dictionary,
                        plane_values, with_octave_scales)
from errors import ConfigError, InvalidArgumentError
from geometry import GroupKind, TransformParams, center_conjugate
from imaging import Image, l2_norm, load_pgm, read_idx_images, read_idx_labels, sample_idx_indices, warp, \
    warp_about_center
from registration import Objective, RefinementConfig, register, transformation_error
from sparse import SparseApprox, nmp, synthesize

logger = logging.getLogger(__name__)

# Configuration
DATA_DIR = os.getenv("SPARSEREG_DATA_DIR", "./data")
OUTPUT_DIR = os.getenv("SPARSEREG_OUTPUT_DIR", "./results")
SCHEMA_VERSION = 1
EXPERIMENTS = ("aniso_sweep", "scale_step_sweep", "transform_errors", "distance_compare", "classify")
METHODS = ("euclid", "tangent", "gd", "sparse")
REGIMES = ("transformed", "aligned")
SWEEP_K = 3
SWEEP_ROTATION = math.pi / 4
SWEEP_ATOM_SCALE = 3.0
SWEEP_BALL_GAP = 10.0
SWEEP_BALL_ASPECT = 1.7
# (dx, dy) from the center, log2 blob size in I1, log2 blob size in I2
SWEEP_BLOBS = ((-18.0, -13.0, 2.8, 2.55), (18.0, -13.0, 2.55, 2.8), (0.0, 19.0, 1.55, 1.95))
SWEEP_SHIFT = (3.0, -2.0)
SWEEP_MAX_SCALE = 8.0
# registration gaps below this are rounding
SWEEP_TOL = 1e-9
GD_CLASSIFY_ITERS = 15
DIGIT_SIZE = 28
# explicit keys win over these
FULL_SCALE = {"trials": 100, "train_per_class": 100, "test_per_class": 100,
              "digit_max_translation": DIGIT_SIZE / 2, "digit_scale_min": 0.5, "digit_scale_max": 1.5}
MNIST_IMAGES = ("train-images-idx3-ubyte", "train-images.idx3-ubyte")
MNIST_LABELS = ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte")
SPEC_KEYS = {"experiment", "K", "k_values", "trials", "seed", "max_translation", "scale_min", "scale_max",
             "rotation_max", "digit_max_translation", "digit_scale_min", "digit_scale_max", "nu_values",
             "scale_steps", "data_dir", "object_paths", "digits", "train_per_class", "test_per_class",
             "methods", "regimes", "refine", "objective", "output", "full_scale", "max_iters"}


@dataclass(frozen=True)
class TransformRanges:
    """
    Uniform sampling box for random transformations, about the image center:
    each translation component in [-max_translation, max_translation], scale
    in [scale_min, scale_max], theta in [-rotation_max, rotation_max].
    """
    max_translation: float = 8.0
    scale_min: float = 0.5
    scale_max: float = 1.5
    rotation_max: float = math.pi

    def __post_init__(self):
        if not self.max_translation >= 0:
            raise ConfigError(f"max_translation must be >= 0, got {self.max_translation}")
        if not 0.5 <= self.scale_min <= self.scale_max <= 1.5:
            raise ConfigError(f"scale range must lie in [0.5, 1.5], got [{self.scale_min}, {self.scale_max}]")
        if not 0.0 <= self.rotation_max <= math.pi:
            raise ConfigError(f"rotation_max must lie in [0, pi], got {self.rotation_max}")

    @classmethod
    def identity(cls) -> "TransformRanges":
        return cls(0.0, 1.0, 1.0, 0.0)

    def check_fits(self, width: int, height: int):
        if self.max_translation > min(width, height) / 2.0:
            raise ConfigError(f"max_translation {self.max_translation} exceeds half the image size "
                              f"({width}x{height})")

    def sample(self, rng: np.random.Generator, kind: GroupKind) -> TransformParams:
        t = self.max_translation
        bx, by = rng.uniform(-t, t, size=2) if t > 0 else (0.0, 0.0)
        a = rng.uniform(self.scale_min, self.scale_max) if kind.has_scale else 1.0
        theta = rng.uniform(-self.rotation_max, self.rotation_max) if kind.has_rotation else 0.0
        return TransformParams(float(bx), float(by), float(a), float(theta))


def _digit_ranges_default() -> TransformRanges:
    return TransformRanges(max_translation=2.0, scale_min=0.8, scale_max=1.2)


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str = "transform_errors"
    dictionary: DictionaryConfig = field(default_factory=default_config)
    K: int = 10
    k_values: tuple = (1, 3, 5, 10, 15)
    trials: int = 30
    seed: int = 0
    ranges: TransformRanges = field(default_factory=TransformRanges)
    digit_ranges: TransformRanges = field(default_factory=_digit_ranges_default)
    nu_values: tuple = (1.2, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0)
    scale_steps: tuple = (0.25, 0.5, 1.0)
    data_dir: str = DATA_DIR
    object_paths: tuple = ()
    digits: tuple = (0, 1, 2, 3, 4, 5)
    train_per_class: int = 20
    test_per_class: int = 20
    methods: tuple = METHODS
    regimes: tuple = ("transformed",)
    refine: bool = True
    objective: Objective = Objective.RASTER
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    output: Optional[str] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment '{self.experiment}', expected one of {', '.join(EXPERIMENTS)}")
        if self.trials < 1:
            raise ConfigError(f"trial count must be >= 1, got {self.trials}")
        if self.K < 1 or any(k < 1 for k in self.k_values):
            raise ConfigError("sparsity values must be >= 1")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("per-class sample sizes must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"unknown methods {sorted(unknown)}, expected a subset of {', '.join(METHODS)}")
        if set(self.regimes) - set(REGIMES) or not self.regimes:
            raise ConfigError(f"regimes must be a subset of {', '.join(REGIMES)}")
        try:
            object.__setattr__(self, "objective", Objective(self.objective))
        except ValueError as e:
            raise ConfigError(f"unknown objective '{self.objective}'") from e

    def with_(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentSpec":
        """Flat keys: dictionary keys (group, nu, ...) plus experiment keys; None values are skipped."""
        mapping = {k: v for k, v in mapping.items() if v is not None}
        if mapping.get("full_scale"):
            mapping = {**FULL_SCALE, **mapping}
        unknown = set(mapping) - CONFIG_KEYS - SPEC_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        dict_keys = {k: v for k, v in mapping.items() if k in CONFIG_KEYS}
        base = cls()
        try:
            dictionary = DictionaryConfig.from_mapping(dict_keys) if dict_keys else base.dictionary
            values = dict(
                experiment=str(mapping.get("experiment", base.experiment)),
                dictionary=dictionary,
                K=int(mapping.get("K", base.K)),
                k_values=tuple(int(k) for k in mapping.get("k_values", base.k_values)),
                trials=int(mapping.get("trials", base.trials)),
                seed=int(mapping.get("seed", base.seed)),
                ranges=TransformRanges(
                    float(mapping.get("max_translation", base.ranges.max_translation)),
                    float(mapping.get("scale_min", base.ranges.scale_min)),
                    float(mapping.get("scale_max", base.ranges.scale_max)),
                    float(mapping.get("rotation_max", base.ranges.rotation_max))),
                digit_ranges=TransformRanges(
                    float(mapping.get("digit_max_translation", base.digit_ranges.max_translation)),
                    float(mapping.get("digit_scale_min", base.digit_ranges.scale_min)),
                    float(mapping.get("digit_scale_max", base.digit_ranges.scale_max)),
                    float(mapping.get("rotation_max", base.digit_ranges.rotation_max))),
                nu_values=tuple(float(v) for v in mapping.get("nu_values", base.nu_values)),
                scale_steps=tuple(float(v) for v in mapping.get("scale_steps", base.scale_steps)),
                data_dir=str(mapping.get("data_dir", base.data_dir)),
                object_paths=tuple(str(p) for p in mapping.get("object_paths", base.object_paths)),
                digits=tuple(int(d) for d in mapping.get("digits", base.digits)),
                train_per_class=int(mapping.get("train_per_class", base.train_per_class)),
                test_per_class=int(mapping.get("test_per_class", base.test_per_class)),
                methods=tuple(str(m) for m in mapping.get("methods", base.methods)),
                regimes=tuple(str(r) for r in mapping.get("regimes", base.regimes)),
                refine=bool(mapping.get("refine", base.refine)),
                objective=str(mapping.get("objective", base.objective.value)),
                refinement=replace(base.refinement, max_iters=int(mapping.get("max_iters", base.refinement.max_iters))),
                output=mapping.get("output"),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid experiment config: {e}") from e
        return cls(**values)


def load_config(path: str) -> dict:
    """Flat `key: value` file; an empty file is an empty mapping."""
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a key: value mapping")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config {path} must be flat, nested keys: {', '.join(map(str, nested))}")
    return data


def load_spec(path: Optional[str] = None, **overrides) -> ExperimentSpec:
    """File keys first, then non-None overrides (CLI flags win)."""
    mapping = load_config(path) if path else {}
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec.from_mapping(mapping)


# --- synthetic data -----------------------------------------------------------

def synth_transformed(img: Image, n: int, ranges: TransformRanges, seed: int,
                      kind: GroupKind = GroupKind.SIM2) -> list:
    """n copies of img warped about its center, with the parameters used."""
    if n < 0:
        raise InvalidArgumentError(f"n must be >= 0, got {n}")
    ranges.check_fits(img.width, img.height)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        eta = ranges.sample(rng, kind)
        out.append((warp_about_center(img, eta, kind), eta))
    return out


def _smooth_disk(xs, ys, cx, cy, radius, soft=0.8):
    d = np.hypot(xs - cx, ys - cy)
    return 0.5 * (1.0 - np.tanh((d - radius) / soft))


def make_ball_image(width: int = 75, height: int = 75,
                    balls: Sequence[tuple] = ((27.0, 31.0, 9.0, 0.4), (47.0, 45.0, 6.5, 2.1))) -> Image:
    """Balls (cx, cy, radius, seam angle) with a bright curved seam across each."""
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    out = np.zeros((height, width))
    for cx, cy, r, angle in balls:
        c, s = math.cos(angle), math.sin(angle)
        u = (c * (xs - cx) + s * (ys - cy)) / r
        v = (-s * (xs - cx) + c * (ys - cy)) / r
        seam = np.exp(-((v - 0.45 * np.sin(math.pi * u)) / 0.12) ** 2)
        out = np.maximum(out, _smooth_disk(xs, ys, cx, cy, r) * (0.55 + 0.45 * seam))
    return Image(out)


def _oval(xs, ys, cx, cy, along, across, theta=0.0):
    c, s = math.cos(theta), math.sin(theta)
    u = c * (xs - cx) + s * (ys - cy)
    v = -s * (xs - cx) + c * (ys - cy)
    return np.exp(-(u / along) ** 2 - (v / across) ** 2)


def make_ball_pair(width: int = 75, height: int = 75, angle: float = SWEEP_ROTATION) -> tuple:
    """
    (I1, I2, eta0), eta0 a rotation by `angle` about the center.

    Two oval balls SWEEP_BALL_GAP apart on a horizontal line through the
    center, each SWEEP_ATOM_SCALE wide along that line and SWEEP_BALL_ASPECT
    times taller across it. I2 puts the pair on the rotated line, every ball
    also turned a quarter in place: atoms sitting on one ball see the quarter
    turn, an elongated atom covering both balls only sees `angle`.
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    a, half = SWEEP_ATOM_SCALE, SWEEP_BALL_GAP / 2.0
    c, s = math.cos(angle), math.sin(angle)
    img1 = sum(_oval(xs, ys, cx + sign * half, cy, a, SWEEP_BALL_ASPECT * a) for sign in (-1, 1))
    img2 = sum(_oval(xs, ys, cx + sign * half * c, cy + sign * half * s, SWEEP_BALL_ASPECT * a, a, angle)
               for sign in (-1, 1))
    return Image(img1), Image(img2), TransformParams(0.0, 0.0, 1.0, angle)


def make_blob_pair(width: int = 75, height: int = 75, shift: tuple = SWEEP_SHIFT) -> tuple:
    """
    (I1, I2, eta0), eta0 the translation `shift`. Round blobs from
    SWEEP_BLOBS; I2 moves them all by `shift` and resizes each in place,
    the two large ones in opposite directions.
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    img1 = sum(_oval(xs, ys, cx + dx, cy + dy, 2.0 ** e1, 2.0 ** e1) for dx, dy, e1, _ in SWEEP_BLOBS)
    img2 = sum(_oval(xs, ys, cx + dx + shift[0], cy + dy + shift[1], 2.0 ** e2, 2.0 ** e2)
               for dx, dy, _, e2 in SWEEP_BLOBS)
    return Image(img1), Image(img2), TransformParams(shift[0], shift[1])


def make_object_image(width: int = 75, height: int = 75, seed: int = 0, blobs: int = 12) -> Image:
    """
    Textured object on a black background: a wavy star-shaped silhouette
    filled with random anisotropic Gaussian blobs. Stands in for the object
    photographs the experiments were designed around.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    radius = 0.2 * min(width, height)
    phi = np.arctan2(ys - cy, xs - cx)
    outline = radius * (1.0 + sum(rng.uniform(0.05, 0.18) * np.cos(k * phi + rng.uniform(0, 2 * math.pi))
                                  for k in (2, 3, 5)))
    mask = 0.5 * (1.0 - np.tanh((np.hypot(xs - cx, ys - cy) - outline) / 1.0))
    texture = np.zeros((height, width))
    for _ in range(blobs):
        mother = MotherFunction(nu=float(rng.uniform(1.5, 4.0)))
        bx, by = cx + rng.uniform(-radius, radius), cy + rng.uniform(-radius, radius)
        a, theta = rng.uniform(1.5, 4.0), rng.uniform(0.0, math.pi)
        texture += rng.uniform(0.5, 1.0) * a * mother.xi * plane_values(mother, xs - bx, ys - by, a, theta)
    out = mask * (0.3 + texture)
    return Image(out / out.max())


# glyph strokes in unit coordinates, x right, y down
def _arc(cx, cy, r, t0, t1, n=40):
    t = np.linspace(t0, t1, n)
    return np.column_stack([cx + r * np.cos(t), cy + r * 1.1 * np.sin(t)])


def _line(*points, n=20):
    pts = np.asarray(points, dtype=float)
    return np.concatenate([np.linspace(p, q, n) for p, q in zip(pts[:-1], pts[1:])])


GLYPH_STROKES = {
    0: lambda: [_arc(0.5, 0.5, 0.22, 0.0, 2 * math.pi, 60)],
    1: lambda: [_line((0.38, 0.27), (0.52, 0.15), (0.52, 0.85))],
    2: lambda: [_arc(0.5, 0.33, 0.18, -math.pi, 0.0), _line((0.68, 0.33), (0.3, 0.85), (0.74, 0.85))],
    3: lambda: [_arc(0.48, 0.32, 0.17, -0.9 * math.pi, 0.5 * math.pi),
                _arc(0.48, 0.67, 0.17, -0.5 * math.pi, 0.9 * math.pi)],
    4: lambda: [_line((0.62, 0.85), (0.62, 0.15), (0.28, 0.62), (0.76, 0.62))],
    5: lambda: [_line((0.72, 0.15), (0.36, 0.15), (0.34, 0.46)),
                _arc(0.5, 0.63, 0.19, -0.65 * math.pi, 0.75 * math.pi)],
}


def make_glyph(digit: int, rng: np.random.Generator, size: int = DIGIT_SIZE) -> Image:
    """Handwriting-like digit 0-5: jittered strokes rendered with a Gaussian pen."""
    if digit not in GLYPH_STROKES:
        raise InvalidArgumentError(f"no glyph for digit {digit}, available: {sorted(GLYPH_STROKES)}")
    pts = np.concatenate(GLYPH_STROKES[digit]())
    warp_matrix = np.eye(2) + rng.normal(0.0, 0.06, size=(2, 2))
    pts = (pts - 0.5) @ warp_matrix.T + 0.5 + rng.normal(0.0, 0.03, size=2)
    margin = size / 7.0
    pix = margin + pts * (size - 1 - 2 * margin)
    pen = rng.uniform(0.9, 1.3)
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    d2 = (xs.ravel()[:, None] - pix[None, :, 0]) ** 2 + (ys.ravel()[:, None] - pix[None, :, 1]) ** 2
    return Image(np.exp(-d2.min(axis=1) / (2.0 * pen ** 2)).reshape(size, size))


def glyph_dataset(digits: Sequence[int], per_class: int, seed: int, size: int = DIGIT_SIZE) -> list:
    rng = np.random.default_rng(seed)
    return [(make_glyph(d, rng, size), int(d)) for d in sorted(set(digits)) for _ in range(per_class)]


def _find_file(directory: str, names: Sequence[str]) -> Optional[str]:
    for name in names:
        hits = sorted(glob.glob(os.path.join(directory, name)) + glob.glob(os.path.join(directory, name + ".gz")))
        if hits:
            return hits[0]
    return None


def load_digits(spec: ExperimentSpec) -> tuple:
    """
    (train, test) lists of (Image, label). MNIST IDX files under data_dir when
    present, disjoint seeded draws; procedural glyphs otherwise.
    """
    images_path = _find_file(spec.data_dir, MNIST_IMAGES)
    labels_path = _find_file(spec.data_dir, MNIST_LABELS)
    if images_path is None or labels_path is None:
        logger.warning(f"⚠️ No MNIST IDX files in {spec.data_dir}, using procedural glyphs")
        return (glyph_dataset(spec.digits, spec.train_per_class, spec.seed),
                glyph_dataset(spec.digits, spec.test_per_class, spec.seed + 1))
    images, labels = read_idx_images(images_path), read_idx_labels(labels_path)
    train_idx = sample_idx_indices(labels, spec.digits, spec.train_per_class, spec.seed)
    test_idx = sample_idx_indices(labels, spec.digits, spec.test_per_class, spec.seed + 1, exclude=set(train_idx))
    pick = lambda idx: [(Image(images[i] / 255.0), int(labels[i])) for i in idx]
    return pick(train_idx), pick(test_idx)


def load_objects(spec: ExperimentSpec) -> list:
    """(name, Image) pairs: user PGMs when given, procedural objects otherwise."""
    if spec.object_paths:
        return [(os.path.splitext(os.path.basename(p))[0], load_pgm(p)) for p in spec.object_paths]
    w, h = spec.dictionary.width, spec.dictionary.height
    return [(f"object{k}", make_object_image(w, h, seed=spec.seed + k)) for k in range(3)]


# --- shared helpers -------------------------------------------------------------

def fit_dictionary(cfg: DictionaryConfig, img: Image) -> DictionaryConfig:
    """Same dictionary on the image's raster; SIM(2) scales are re-derived at half-octave steps."""
    if (cfg.width, cfg.height) == (img.width, img.height):
        return cfg
    resized = cfg.with_(width=img.width, height=img.height, scales=(1.0,))
    return with_octave_scales(resized, 0.5) if cfg.kind is GroupKind.SIM2 else resized


def approximate(img: Image, K: int, cfg: DictionaryConfig) -> SparseApprox:
    return nmp(img, K, get_dictionary(fit_dictionary(cfg, img)))[0]


def sparse_distance(p: SparseApprox, q: SparseApprox, refine: bool = False,
                    rcfg: Optional[RefinementConfig] = None, objective: Objective = Objective.PLANE) -> tuple:
    """(distance, eta): d_a, or the refined value when refinement is on."""
    res = register(p, q, refine=refine, rcfg=rcfg, objective=objective)
    if refine:
        return res.d_refined, res.eta_refined
    return res.d_a, res.eta_hat


def approximation_error(img1: Image, p: SparseApprox, img2: Image, q: SparseApprox) -> float:
    """(||I1 - p|| + ||I2 - q||) / 2."""
    return 0.5 * (l2_norm(img1 - synthesize(p)) + l2_norm(img2 - synthesize(q)))


def image_registration_error(img1: Image, img2: Image, eta0_center: TransformParams, eta_hat: TransformParams,
                             kind: GroupKind) -> float:
    """| ||U(eta0) I1 - I2|| - ||U(eta_hat) I1 - I2|| |, eta_hat in the raster frame."""
    best = l2_norm(warp_about_center(img1, eta0_center, kind) - img2)
    found = l2_norm(warp(img1, eta_hat, kind) - img2)
    gap = abs(best - found)
    return 0.0 if gap <= SWEEP_TOL * max(best, 1.0) else gap


def spearman_trend(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation; 0 when either series is constant."""
    if len(x) < 2 or np.ptp(np.asarray(x, dtype=float)) == 0 or np.ptp(np.asarray(y, dtype=float)) == 0:
        return 0.0
    return float(stats.spearmanr(x, y)[0])


def write_csv(frame: pd.DataFrame, path: str, experiment: str) -> str:
    out = frame.copy()
    out.insert(0, "schema", f"{experiment}/v{SCHEMA_VERSION}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    out.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    logger.info(f"💾 {len(out)} rows -> {path}")
    return path


# --- experiments ----------------------------------------------------------------

def _sweep_row(img1: Image, img2: Image, eta0: TransformParams, cfg: DictionaryConfig, spec: ExperimentSpec) -> dict:
    dico = get_dictionary(cfg)
    p, _ = nmp(img1, SWEEP_K, dico)
    q, _ = nmp(img2, SWEEP_K, dico)
    # these sweeps isolate the candidate search, so no refinement
    res = register(p, q, refine=False, objective=spec.objective)
    return {
        "K": SWEEP_K,
        "n_atoms": len(dico),
        "approx_error": approximation_error(img1, p, img2, q),
        "registration_error": image_registration_error(img1, img2, eta0, res.eta_hat, cfg.kind),
        "d_a": res.d_a,
        "bx": res.eta_hat.bx, "by": res.eta_hat.by, "a": res.eta_hat.a, "theta": res.eta_hat.theta,
    }


def run_aniso_sweep(spec: ExperimentSpec) -> pd.DataFrame:
    """
    Approximation vs registration error as the mother function's anisotropy
    varies, on the pi/4 ball pair. Atoms keep the single size
    SWEEP_ATOM_SCALE, so every candidate is a rigid motion.
    """
    start = time.time()
    base = spec.dictionary
    img1, img2, eta0 = make_ball_pair(base.width, base.height)
    if base.kind is not GroupKind.SIM2:
        logger.info(f"aniso_sweep uses fixed-size SIM2 atoms, ignoring group {base.kind.value}")
    rows = []
    for nu in spec.nu_values:
        cfg = base.with_(kind=GroupKind.SIM2, mother=MotherFunction(nu=nu), scales=(SWEEP_ATOM_SCALE,))
        row = {"nu": nu}
        row.update(_sweep_row(img1, img2, eta0, cfg, spec))
        rows.append(row)
        logger.info(f"📊 nu={nu:g}: approx {row['approx_error']:.4g}, registration {row['registration_error']:.4g}")
    frame = pd.DataFrame(rows)
    logger.info(f"⏱️ aniso_sweep: {time.time() - start:.2f}s, Spearman "
                f"approx {spearman_trend(frame['nu'], frame['approx_error']):+.2f} / "
                f"registration {spearman_trend(frame['nu'], frame['registration_error']):+.2f}")
    return frame


def run_scale_step_sweep(spec: ExperimentSpec) -> pd.DataFrame:
    """
    Isotropic mother, fixed scale range [1, 8], varying octave step, on the
    shifted and resized blob pair. A fine grid fits each blob's own size, so
    I1 and I2 land on different scales; a coarse one snaps both to the same.
    """
    start = time.time()
    base = spec.dictionary
    img1, img2, eta0 = make_blob_pair(base.width, base.height)
    rows = []
    for step in spec.scale_steps:
        cfg = base.with_(kind=GroupKind.SIM2, mother=MotherFunction(nu=1.0), scales=(1.0,))
        cfg = with_octave_scales(cfg, step, SWEEP_MAX_SCALE)
        row = {"scale_step": step, "n_scales": len(cfg.scales)}
        row.update(_sweep_row(img1, img2, eta0, cfg, spec))
        rows.append(row)
        logger.info(f"📊 step={step:g}: approx {row['approx_error']:.4g}, "
                    f"registration {row['registration_error']:.4g}")
    logger.info(f"⏱️ scale_step_sweep: {time.time() - start:.2f}s")
    return pd.DataFrame(rows)


def run_transform_errors(spec: ExperimentSpec) -> pd.DataFrame:
    """
    Mean translation / scale / rotation errors against the ground truth per
    K, with and without refinement (`refined` column). Rotation gaps are
    folded by the stabilizer period.
    """
    start = time.time()
    _, img = load_objects(spec)[0]
    cfg = fit_dictionary(spec.dictionary, img)
    dico = get_dictionary(cfg)
    kind = cfg.kind
    period = cfg.stabilizer.rotation_period
    pairs = synth_transformed(img, spec.trials, spec.ranges, spec.seed, kind)
    back = -img.center

    records = []
    for K in spec.k_values:
        p, _ = nmp(img, K, dico)
        for trial, (img2, eta_true) in enumerate(pairs):
            q, _ = nmp(img2, K, dico)
            res = register(p, q, refine=spec.refine, rcfg=spec.refinement, objective=spec.objective)
            found = [(False, res.eta_hat)] + ([(True, res.eta_refined)] if spec.refine else [])
            for refined, eta in found:
                trans, scale, rot = transformation_error(center_conjugate(eta, back, kind), eta_true, period)
                records.append({"K": K, "refined": refined, "trial": trial, "translation_error": trans,
                                "scale_error": scale, "rotation_error_deg": rot})
        logger.info(f"📊 K={K} done ({len(pairs)} trials)")

    trials = pd.DataFrame(records)
    summary = trials.groupby(["K", "refined"], sort=True).agg(
        translation_error=("translation_error", "mean"), translation_std=("translation_error", "std"),
        scale_error=("scale_error", "mean"), scale_std=("scale_error", "std"),
        rotation_error_deg=("rotation_error_deg", "mean"), rotation_std=("rotation_error_deg", "std"),
        trials=("trial", "count"),
    ).reset_index()
    logger.info(f"⏱️ transform_errors: {time.time() - start:.2f}s")
    return summary


def _method_distance(method: str, img1: Image, img2: Image, p: Optional[SparseApprox],
                     q: Optional[SparseApprox], spec: ExperimentSpec, kind: GroupKind,
                     rcfg: RefinementConfig, objective: Objective) -> float:
    if method == "euclid":
        return euclidean_distance(img1, img2)
    if method == "tangent":
        return tangent_distance(img1, img2, kind)
    if method == "gd":
        return gd_distance(img1, img2, rcfg, kind)[0]
    return sparse_distance(p, q, spec.refine, rcfg, objective)[0]


def run_distance_compare(spec: ExperimentSpec) -> pd.DataFrame:
    """
    Distances from the first object to transformed copies of every object:
    the same object should stay near zero, other objects far.
    """
    start = time.time()
    objects = load_objects(spec)
    ref_name, ref = objects[0]
    cfg = fit_dictionary(spec.dictionary, ref)
    p = approximate(ref, spec.K, cfg) if "sparse" in spec.methods else None
    rows = []
    for k, (name, img) in enumerate(objects):
        copies = synth_transformed(img, spec.trials, spec.ranges, spec.seed + k, cfg.kind)
        approxs = [approximate(c, spec.K, cfg) for c, _ in copies] if p is not None else [None] * len(copies)
        for method in spec.methods:
            dists = np.array([_method_distance(method, ref, c, p, q, spec, cfg.kind, spec.refinement, spec.objective)
                              for (c, _), q in zip(copies, approxs)])
            rows.append({"method": method, "reference": ref_name, "target": name, "K": spec.K,
                         "mean": float(dists.mean()), "std": float(dists.std()), "trials": len(dists)})
            logger.info(f"📊 {method} {ref_name}->{name}: {dists.mean():.4g} ± {dists.std():.3g}")
    logger.info(f"⏱️ distance_compare: {time.time() - start:.2f}s")
    return pd.DataFrame(rows)


def run_classify(spec: ExperimentSpec) -> pd.DataFrame:
    """
    Nearest-neighbour digit classification, one row per (regime, method, K).
    The sparse method registers with the closed-form objective; gd runs a
    shortened descent.
    """
    start = time.time()
    train, test = load_digits(spec)
    cfg = fit_dictionary(spec.dictionary, train[0][0])
    kind = cfg.kind
    gd_cfg = replace(spec.refinement, max_iters=min(spec.refinement.max_iters, GD_CLASSIFY_ITERS))
    rng = np.random.default_rng(spec.seed + 2)
    spec.digit_ranges.check_fits(cfg.width, cfg.height)
    moved = [(warp_about_center(img, spec.digit_ranges.sample(rng, kind), kind), label) for img, label in test]
    k_values = sorted(set(spec.k_values) | {spec.K})

    rows = []
    for regime in spec.regimes:
        queries = moved if regime == "transformed" else test
        for method in spec.methods:
            for K in (k_values if method == "sparse" else [None]):
                if method == "sparse":
                    dico = get_dictionary(cfg)
                    train_p = [nmp(img, K, dico)[0] for img, _ in train]
                    query_p = [nmp(img, K, dico)[0] for img, _ in queries]
                else:
                    train_p, query_p = [None] * len(train), [None] * len(queries)
                correct = 0
                for (img, label), q in zip(queries, query_p):
                    dists = [_method_distance(method, t_img, img, tp, q, spec, kind, gd_cfg, Objective.PLANE)
                             for (t_img, _), tp in zip(train, train_p)]
                    correct += int(train[int(np.argmin(dists))][1] == label)
                acc = correct / len(queries)
                rows.append({"regime": regime, "method": method, "K": K if K is not None else 0,
                             "accuracy": acc, "n_train": len(train), "n_test": len(queries)})
                logger.info(f"📊 {regime} {method}{'' if K is None else f' K={K}'}: {acc:.1%}")
    logger.info(f"⏱️ classify: {time.time() - start:.2f}s")
    return pd.DataFrame(rows)


RUNNERS = {
    "aniso_sweep": run_aniso_sweep,
    "scale_step_sweep": run_scale_step_sweep,
    "transform_errors": run_transform_errors,
    "distance_compare": run_distance_compare,
    "classify": run_classify,
}


def run_experiment(spec: ExperimentSpec) -> pd.DataFrame:
    logger.info(f"🚀 {spec.experiment} (seed={spec.seed}, trials={spec.trials})")
    frame = RUNNERS[spec.experiment](spec)
    if spec.output:
        write_csv(frame, spec.output, spec.experiment)
    return frame
