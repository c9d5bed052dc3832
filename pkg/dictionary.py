"""
Parametric geometric dictionary D = {U(gamma) phi : gamma in T_d}.

Atoms are sampled analytically at pixel centers (no warping). Two
normalizations coexist:
  - plane: a^-1 xi^-1 phi(R_-theta (x - b) / a), unit norm over the whole
    plane, which is what U(eta) preserves;
  - domain: the plane raster divided by its in-domain norm, unit norm on the
    raster. Dictionary atoms and NMP use this one.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from errors import AtomEscapesDomainError, ConfigError, EmptyGridError, InvalidArgumentError
from geometry import GroupKind, Stabilizer, TransformParams, stabilizer_of_gaussian, trivial_stabilizer
from imaging import Image, image_center

logger = logging.getLogger(__name__)

# Configuration
TRUNCATION = 2.0 * math.sqrt(2.0)     # 4 sigma of exp(-v^2) per axis
ESCAPE_ENERGY = 1e-12
RENDER_CHUNK = 4_000_000              # max floats per rendering block
CONFIG_KEYS = {"group", "nu", "rot_step", "scale_octaves", "trans_step", "width", "height",
               "max_scale", "scales", "mother", "box_length", "energy_fraction"}


class MotherKind(str, Enum):
    GAUSSIAN = "gaussian"
    BOX = "box"


@dataclass(frozen=True)
class MotherFunction:
    """Anisotropic Gaussian exp(-(x/nu)^2 - y^2), or a 1-D box of `length` samples."""
    kind: MotherKind = MotherKind.GAUSSIAN
    nu: float = 4.0
    length: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kind", MotherKind(self.kind))
        if self.kind is MotherKind.GAUSSIAN and not self.nu >= 1.0:
            raise InvalidArgumentError(f"Gaussian anisotropy must satisfy nu >= 1, got {self.nu}")
        if self.kind is MotherKind.BOX and (int(self.length) != self.length or self.length < 1):
            raise InvalidArgumentError(f"box length must be a positive integer, got {self.length}")

    @property
    def xi(self) -> float:
        """Continuous L2 norm of the untransformed mother function."""
        if self.kind is MotherKind.BOX:
            return math.sqrt(self.length)
        return math.sqrt(math.pi * self.nu / 2.0)

    @property
    def is_isotropic(self) -> bool:
        return self.kind is MotherKind.GAUSSIAN and abs(self.nu - 1.0) <= 1e-12

    def half_extents(self, a: float, theta: float) -> tuple:
        """Half width/height (pixels) of the axis-aligned box holding the truncated support."""
        if self.kind is MotherKind.BOX:
            return int(math.ceil(self.length * a)), 0
        u, v = TRUNCATION * self.nu * a, TRUNCATION * a
        c, s = abs(math.cos(theta)), abs(math.sin(theta))
        return int(math.ceil(u * c + v * s)), int(math.ceil(u * s + v * c))

    def evaluate(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.kind is MotherKind.BOX:
            return ((u > -1e-9) & (u < self.length - 1e-9) & (np.abs(v) < 1e-9)).astype(float)
        inside = (np.abs(u) <= TRUNCATION * self.nu) & (np.abs(v) <= TRUNCATION)
        return np.where(inside, np.exp(-(u / self.nu) ** 2 - v ** 2), 0.0)


@dataclass(frozen=True)
class DictionaryConfig:
    kind: GroupKind = GroupKind.SIM2
    mother: MotherFunction = field(default_factory=MotherFunction)
    width: int = 75
    height: int = 75
    trans_step: int = 1
    rot_step: float = math.pi / 8
    scales: tuple = (1.0,)
    energy_fraction: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "kind", GroupKind.parse(self.kind))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"invalid raster size {self.width}x{self.height}")
        if int(self.trans_step) != self.trans_step or self.trans_step < 1:
            raise ConfigError(f"translation step must be a positive integer, got {self.trans_step}")
        if not self.rot_step > 0:
            raise ConfigError(f"rotation step must be positive, got {self.rot_step}")
        if not self.scales:
            raise ConfigError("scale list is empty")
        if list(self.scales) != sorted(self.scales) or len(set(self.scales)) != len(self.scales):
            raise ConfigError(f"scales must be strictly ascending, got {self.scales}")
        if self.scales[0] < 1.0:
            raise ConfigError(f"smallest scale must be >= 1, got {self.scales[0]}")
        if self.kind is not GroupKind.SIM2 and self.scales != (1.0,):
            raise ConfigError(f"group {self.kind.value} has no scale parameter; use scales=(1,)")
        if self.mother.kind is MotherKind.BOX and self.kind is not GroupKind.TRANSLATION:
            raise ConfigError("box atoms are only defined under the translation group")
        if not 0.0 < self.energy_fraction <= 1.0:
            raise ConfigError(f"energy fraction must lie in (0, 1], got {self.energy_fraction}")

    def with_(self, **changes) -> "DictionaryConfig":
        return replace(self, **changes)

    @property
    def nu(self) -> float:
        return self.mother.nu

    @property
    def stabilizer(self) -> Stabilizer:
        # an isotropic mother keeps theta = 0 only, so no duplicate atoms remain
        if self.mother.kind is MotherKind.BOX or self.mother.is_isotropic:
            return trivial_stabilizer(self.kind)
        return stabilizer_of_gaussian(self.mother.nu, self.kind)

    @property
    def rotations(self) -> tuple:
        if not self.kind.has_rotation or self.mother.kind is MotherKind.BOX or self.mother.is_isotropic:
            return (0.0,)
        period = self.stabilizer.rotation_period
        count = int(math.ceil(period / self.rot_step - 1e-9))
        return tuple(k * self.rot_step for k in range(count))

    @property
    def translations_x(self) -> np.ndarray:
        return np.arange(0, self.width, self.trans_step)

    @property
    def translations_y(self) -> np.ndarray:
        return np.arange(0, self.height, self.trans_step)

    def to_mapping(self) -> dict:
        return {
            "group": self.kind.value, "mother": self.mother.kind.value, "nu": self.mother.nu,
            "box_length": self.mother.length, "width": self.width, "height": self.height,
            "trans_step": self.trans_step, "rot_step": self.rot_step, "scales": list(self.scales),
            "energy_fraction": self.energy_fraction,
        }

    @classmethod
    def from_mapping(cls, mapping: dict, base: Optional["DictionaryConfig"] = None) -> "DictionaryConfig":
        """
        Builds a config from flat keys (group, nu, rot_step, scale_octaves,
        trans_step, width, height, ...). Without an explicit `scales` list the
        scales follow `scale_octaves` up to `max_scale` or the energy bound.
        """
        unknown = set(mapping) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown dictionary keys: {', '.join(sorted(unknown))}")
        base = base or cls()
        try:
            mother = MotherFunction(
                kind=MotherKind(str(mapping.get("mother", base.mother.kind.value)).lower()),
                nu=float(mapping.get("nu", base.mother.nu)),
                length=int(mapping.get("box_length", base.mother.length)),
            )
            kind = GroupKind.parse(mapping.get("group", base.kind))
            cfg = cls(
                kind=kind, mother=mother,
                width=int(mapping.get("width", base.width)),
                height=int(mapping.get("height", base.height)),
                trans_step=int(mapping.get("trans_step", base.trans_step)),
                rot_step=float(mapping.get("rot_step", base.rot_step)),
                scales=(1.0,),
                energy_fraction=float(mapping.get("energy_fraction", base.energy_fraction)),
            )
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid dictionary config: {e}") from e
        if kind is not GroupKind.SIM2:
            return cfg
        if "scales" in mapping:
            return cfg.with_(scales=tuple(float(s) for s in mapping["scales"]))
        max_scale = mapping.get("max_scale")
        return with_octave_scales(cfg, float(mapping.get("scale_octaves", 0.5)),
                                  None if max_scale is None else float(max_scale))


def plane_values(mother: MotherFunction, dx: np.ndarray, dy: np.ndarray, a, theta) -> np.ndarray:
    """Plane-normalized atom values at offsets (dx, dy) from the atom center."""
    c, s = np.cos(theta), np.sin(theta)
    u = (c * dx + s * dy) / a
    v = (-s * dx + c * dy) / a
    return mother.evaluate(u, v) / (a * mother.xi)


def render_plane(params: np.ndarray, cfg: DictionaryConfig) -> np.ndarray:
    """Plane-normalized rasters, shape (n, H, W), for a (n, 4) [bx, by, a, theta] array."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    xs = np.arange(cfg.width, dtype=float)[None, None, :]
    ys = np.arange(cfg.height, dtype=float)[None, :, None]
    col = lambda k: params[:, k][:, None, None]
    return plane_values(cfg.mother, xs - col(0), ys - col(1), col(2), col(3))


def in_domain_norms(params: np.ndarray, cfg: DictionaryConfig) -> np.ndarray:
    params = np.atleast_2d(np.asarray(params, dtype=float))
    chunk = max(1, RENDER_CHUNK // (cfg.width * cfg.height))
    norms = [np.sqrt(np.sum(render_plane(params[i:i + chunk], cfg) ** 2, axis=(1, 2)))
             for i in range(0, len(params), chunk)]
    return np.concatenate(norms) if norms else np.zeros(0)


def gaussian_inner_products(params1: np.ndarray, params2: np.ndarray, nu: float) -> np.ndarray:
    """
    Closed-form <U(eta1) phi, U(eta2) phi> over the plane for the unit-norm
    anisotropic Gaussian; broadcasts over leading axes of (..., 4) arrays.
    With B_k = R_k diag(1/nu^2, 1) R_k^T / a_k^2 and d = b1 - b2:
        pi / (a1 a2 xi^2 sqrt(det(B1 + B2))) * exp(-d^T B1 (B1 + B2)^-1 B2 d)
    """
    p1 = np.asarray(params1, dtype=float)
    p2 = np.asarray(params2, dtype=float)

    def quad(p):
        c, s, a2 = np.cos(p[..., 3]), np.sin(p[..., 3]), p[..., 2] ** 2
        w = 1.0 / nu ** 2
        m = np.empty(p.shape[:-1] + (2, 2))
        m[..., 0, 0] = (w * c * c + s * s) / a2
        m[..., 1, 1] = (w * s * s + c * c) / a2
        m[..., 0, 1] = m[..., 1, 0] = (w - 1.0) * c * s / a2
        return m

    b1, b2 = quad(p1), quad(p2)
    m = b1 + b2
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] ** 2
    m_inv = np.empty_like(m)
    m_inv[..., 0, 0] = m[..., 1, 1] / det
    m_inv[..., 1, 1] = m[..., 0, 0] / det
    m_inv[..., 0, 1] = m_inv[..., 1, 0] = -m[..., 0, 1] / det
    q = b1 @ m_inv @ b2
    d = p1[..., :2] - p2[..., :2]
    expo = np.einsum("...i,...ij,...j->...", d, q, d)
    xi2 = math.pi * nu / 2.0
    return math.pi / (p1[..., 2] * p2[..., 2] * xi2 * np.sqrt(det)) * np.exp(-expo)


def centered_energy_fraction(cfg: DictionaryConfig, a: float) -> float:
    """Worst-case (over rotations) share of a centered atom's energy inside the raster."""
    cx, cy = image_center(cfg.width, cfg.height)
    worst = 1.0
    for theta in cfg.rotations:
        hx, hy = cfg.mother.half_extents(a, theta)
        # sample grid aligned with the raster, wide enough to hold the whole support
        xs = np.arange(math.floor(cx - hx) - 1, math.ceil(cx + hx) + 2, dtype=float)
        ys = np.arange(math.floor(cy - hy) - 1, math.ceil(cy + hy) + 2, dtype=float)
        vals = plane_values(cfg.mother, xs[None, :] - cx, ys[:, None] - cy, a, theta) ** 2
        inside = ((xs >= 0) & (xs < cfg.width))[None, :] & ((ys >= 0) & (ys < cfg.height))[:, None]
        total = vals.sum()
        worst = min(worst, float(vals[inside].sum() / total) if total > 0 else 0.0)
    return worst


def admissible_scales(cfg: DictionaryConfig, warn: bool = True) -> tuple:
    kept = []
    for a in cfg.scales:
        frac = centered_energy_fraction(cfg, a)
        if frac >= cfg.energy_fraction:
            kept.append(a)
        elif warn:
            logger.warning(f"⚠️ Scale {a:.4g} dropped: centered atom keeps {frac:.2%} of its energy "
                           f"(< {cfg.energy_fraction:.0%})")
    return tuple(kept)


def with_octave_scales(cfg: DictionaryConfig, octave_step: float = 0.5,
                       max_scale: Optional[float] = None) -> DictionaryConfig:
    """Scales 2^(k * octave_step), k = 0, 1, ... up to max_scale or the energy bound."""
    if not octave_step > 0:
        raise ConfigError(f"scale_octaves must be positive, got {octave_step}")
    unit = cfg.with_(scales=(1.0,))
    limit = max_scale if max_scale is not None else float(max(cfg.width, cfg.height))
    scales, k = [], 0
    while True:
        a = 2.0 ** (k * octave_step)
        if a > limit + 1e-9 or centered_energy_fraction(unit, a) < cfg.energy_fraction:
            break
        scales.append(a)
        k += 1
    if not scales:
        raise EmptyGridError(f"no admissible scale for a {cfg.width}x{cfg.height} raster")
    return cfg.with_(scales=tuple(scales))


def default_config(width: int = 75, height: int = 75, nu: float = 4.0,
                   kind: GroupKind = GroupKind.SIM2) -> DictionaryConfig:
    """nu=4, pi/8 rotations over [0, pi), half-octave scales, unit translation step."""
    cfg = DictionaryConfig(kind=kind, mother=MotherFunction(nu=nu), width=width, height=height)
    return with_octave_scales(cfg, 0.5) if kind is GroupKind.SIM2 else cfg


@dataclass(frozen=True, eq=False)
class Atom:
    gamma: TransformParams
    raster: Image


def rasterize_atom(gamma: TransformParams, cfg: DictionaryConfig) -> Atom:
    gamma.validate_for(cfg.kind)
    plane = np.maximum(render_plane(gamma.as_array(), cfg)[0], 0.0)
    energy = float(np.sum(plane ** 2))
    if energy < ESCAPE_ENERGY:
        raise AtomEscapesDomainError(f"atom escapes domain: gamma=({gamma.to_text()}), energy {energy:.3g}")
    return Atom(gamma, Image(plane / math.sqrt(energy)))


def lattice_array(cfg: DictionaryConfig, scales: Optional[Sequence[float]] = None) -> np.ndarray:
    """T_d as a (n, 4) array in lexicographic (a, theta, by, bx) order."""
    scales = admissible_scales(cfg) if scales is None else scales
    a, theta, by, bx = np.meshgrid(np.asarray(scales, dtype=float), np.asarray(cfg.rotations, dtype=float),
                                   cfg.translations_y.astype(float), cfg.translations_x.astype(float),
                                   indexing="ij")
    return np.stack([bx.ravel(), by.ravel(), a.ravel(), theta.ravel()], axis=1)


def build_discretization(cfg: DictionaryConfig) -> list:
    """
    T_d in lexicographic (a, theta, by, bx) order. Rotations only span one
    stabilizer period, so each coset gamma o S_phi is represented once.
    """
    grid = [TransformParams.from_array(row) for row in lattice_array(cfg)]
    if not grid:
        raise EmptyGridError("discretization is empty")
    return grid


def coherence(atoms: Sequence[Atom]) -> float:
    if len(atoms) < 2:
        raise InvalidArgumentError("coherence needs at least two atoms")
    x = np.stack([atom.raster.pixels.ravel() for atom in atoms])
    gram = np.abs(x @ x.T)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max())


class Dictionary:
    """
    Built once per config, then read-only. Holds one correlation kernel per
    (scale, rotation) shape and the in-domain norm of every lattice atom, so a
    full correlation sweep <r, phi_gamma> costs one FFT per shape.
    """

    def __init__(self, cfg: DictionaryConfig):
        start = time.time()
        self.cfg = cfg
        self.scales = admissible_scales(cfg)
        if not self.scales:
            raise EmptyGridError("every scale violates the energy rule")
        self.shapes = [(a, theta) for a in self.scales for theta in cfg.rotations]
        self.xs = cfg.translations_x
        self.ys = cfg.translations_y
        self.kernels = [self._kernel(a, theta) for a, theta in self.shapes]
        ones = np.ones((cfg.height, cfg.width))
        norms = [np.sqrt(np.maximum(fftconvolve(ones, (k ** 2)[::-1, ::-1], mode="same"), 0.0))
                 for k in self.kernels]
        self.norm_maps = np.stack([n[np.ix_(self.ys, self.xs)] for n in norms])
        if np.any(self.norm_maps ** 2 < ESCAPE_ENERGY):
            raise AtomEscapesDomainError("a lattice atom has no energy inside the domain")
        logger.info(f"📚 Dictionary {cfg.kind.value} nu={cfg.mother.nu:g}: {len(self)} atoms, "
                    f"{len(self.shapes)} shapes ⏱️ {time.time() - start:.2f}s")

    def _kernel(self, a: float, theta: float) -> np.ndarray:
        hx, hy = self.cfg.mother.half_extents(a, theta)
        hx, hy = min(hx, self.cfg.width - 1), min(hy, self.cfg.height - 1)
        dx = np.arange(-hx, hx + 1, dtype=float)[None, :]
        dy = np.arange(-hy, hy + 1, dtype=float)[:, None]
        return plane_values(self.cfg.mother, dx, dy, a, theta)

    def __len__(self) -> int:
        return len(self.shapes) * len(self.ys) * len(self.xs)

    def correlations(self, residual: np.ndarray) -> np.ndarray:
        """<residual, phi_gamma> for every lattice atom, shape (shapes, ny, nx)."""
        out = np.empty(self.norm_maps.shape)
        for s, kernel in enumerate(self.kernels):
            full = fftconvolve(residual, kernel[::-1, ::-1], mode="same")
            out[s] = full[np.ix_(self.ys, self.xs)]
        return out / self.norm_maps

    def params_at(self, s: int, iy: int, ix: int) -> TransformParams:
        a, theta = self.shapes[s]
        return TransformParams(float(self.xs[ix]), float(self.ys[iy]), a, theta)

    def params_array(self) -> np.ndarray:
        return lattice_array(self.cfg, self.scales)

    def atom(self, gamma: TransformParams) -> Atom:
        return rasterize_atom(gamma, self.cfg)

    def atoms(self, limit: Optional[int] = None) -> Iterator[Atom]:
        for k, row in enumerate(self.params_array()):
            if limit is not None and k >= limit:
                return
            yield rasterize_atom(TransformParams.from_array(row), self.cfg)


@lru_cache(maxsize=16)
def get_dictionary(cfg: DictionaryConfig) -> Dictionary:
    return Dictionary(cfg)
