"""
Parameter-space algebra of the 2-D transformation groups used for registration.

Conventions: x points right, y points down (raster order), a rotation by theta
is counterclockwise in (x, y). An element eta = (b, a, theta) acts on the plane
by x -> b + a R_theta x and on images by f -> a^-1 f(R_-theta (x - b) / a).
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from errors import InfiniteStabilizerError, InvalidArgumentError

# Configuration
TWO_PI = 2.0 * math.pi
PARAM_TOL = 1e-9
KIND_TOL = 1e-12


class GroupKind(str, Enum):
    TRANSLATION = "translation"
    SE2 = "se2"
    SIM2 = "sim2"

    @property
    def dimension(self) -> int:
        return {GroupKind.TRANSLATION: 2, GroupKind.SE2: 3, GroupKind.SIM2: 4}[self]

    @property
    def has_rotation(self) -> bool:
        return self is not GroupKind.TRANSLATION

    @property
    def has_scale(self) -> bool:
        return self is GroupKind.SIM2

    @classmethod
    def parse(cls, name: "str | GroupKind") -> "GroupKind":
        if isinstance(name, GroupKind):
            return name
        key = str(name).strip().lower().replace("-", "").replace("_", "").replace("(", "").replace(")", "")
        aliases = {
            "translation": cls.TRANSLATION, "translation2d": cls.TRANSLATION, "r2": cls.TRANSLATION,
            "se2": cls.SE2, "specialeuclidean2d": cls.SE2, "euclidean": cls.SE2,
            "sim2": cls.SIM2, "similarity2d": cls.SIM2, "similarity": cls.SIM2,
        }
        if key not in aliases:
            raise InvalidArgumentError(f"unknown group '{name}' (expected translation, se2 or sim2)")
        return aliases[key]


def normalize_angle(theta: float) -> float:
    t = math.fmod(float(theta), TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod can land on 2*pi after the shift for tiny negatives
    if t >= TWO_PI:
        t -= TWO_PI
    return t


@dataclass(frozen=True)
class TransformParams:
    bx: float = 0.0
    by: float = 0.0
    a: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        values = (self.bx, self.by, self.a, self.theta)
        if not all(math.isfinite(v) for v in values):
            raise InvalidArgumentError(f"non-finite transform parameters {values}")
        if self.a <= 0.0:
            raise InvalidArgumentError(f"scale must be positive, got a={self.a}")
        object.__setattr__(self, "bx", float(self.bx))
        object.__setattr__(self, "by", float(self.by))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @classmethod
    def identity(cls) -> "TransformParams":
        return cls()

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "TransformParams":
        bx, by, a, theta = (float(v) for v in values)
        return cls(bx, by, a, theta)

    @classmethod
    def from_text(cls, text: str) -> "TransformParams":
        parts = text.split()
        if len(parts) != 4:
            raise InvalidArgumentError(f"expected 'bx by a theta', got '{text}'")
        return cls(*(float(p) for p in parts))

    @property
    def b(self) -> np.ndarray:
        return np.array([self.bx, self.by])

    def as_array(self) -> np.ndarray:
        return np.array([self.bx, self.by, self.a, self.theta])

    def to_text(self) -> str:
        return f"{self.bx:.10g} {self.by:.10g} {self.a:.10g} {self.theta:.10g}"

    def validate_for(self, kind: GroupKind) -> "TransformParams":
        if kind is not GroupKind.SIM2 and abs(self.a - 1.0) > KIND_TOL:
            raise InvalidArgumentError(f"scale a={self.a} is not allowed under {kind.value}")
        if kind is GroupKind.TRANSLATION and angle_difference(self.theta, 0.0) > KIND_TOL:
            raise InvalidArgumentError(f"rotation theta={self.theta} is not allowed under {kind.value}")
        return self

    def is_identity(self, tol: float = PARAM_TOL) -> bool:
        return params_close(self, IDENTITY, tol)


IDENTITY = TransformParams()


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def compose(eta: TransformParams, eta_prime: TransformParams, kind: GroupKind) -> TransformParams:
    """eta o eta' = (b + a R_theta b', a a', theta + theta')."""
    eta.validate_for(kind)
    eta_prime.validate_for(kind)
    c, s = math.cos(eta.theta), math.sin(eta.theta)
    bx = eta.bx + eta.a * (c * eta_prime.bx - s * eta_prime.by)
    by = eta.by + eta.a * (s * eta_prime.bx + c * eta_prime.by)
    if kind is GroupKind.TRANSLATION:
        return TransformParams(bx, by)
    return TransformParams(bx, by, eta.a * eta_prime.a if kind is GroupKind.SIM2 else 1.0, eta.theta + eta_prime.theta)


def inverse(eta: TransformParams, kind: GroupKind) -> TransformParams:
    eta.validate_for(kind)
    c, s = math.cos(eta.theta), math.sin(eta.theta)
    # -a^-1 R_-theta b
    bx = -(c * eta.bx + s * eta.by) / eta.a
    by = -(-s * eta.bx + c * eta.by) / eta.a
    if kind is GroupKind.TRANSLATION:
        return TransformParams(bx, by)
    return TransformParams(bx, by, 1.0 / eta.a, -eta.theta)


def apply_to_point(eta: TransformParams, x: Sequence[float]) -> np.ndarray:
    """Forward action x -> b + a R_theta x."""
    return eta.b + eta.a * rotation_matrix(eta.theta) @ np.asarray(x, dtype=float)


def compose_arrays(eta: np.ndarray, eta_prime: np.ndarray) -> np.ndarray:
    """
    Vectorized SIM(2) composition on parameter arrays of shape (..., 4)
    laid out as [bx, by, a, theta]; broadcasts like numpy. Angles are
    wrapped to [0, 2pi). Restricted to a subgroup it stays in the subgroup.
    """
    eta = np.asarray(eta, dtype=float)
    eta_prime = np.asarray(eta_prime, dtype=float)
    c, s = np.cos(eta[..., 3]), np.sin(eta[..., 3])
    a = eta[..., 2]
    bx = eta[..., 0] + a * (c * eta_prime[..., 0] - s * eta_prime[..., 1])
    by = eta[..., 1] + a * (s * eta_prime[..., 0] + c * eta_prime[..., 1])
    theta = np.mod(eta[..., 3] + eta_prime[..., 3], TWO_PI)
    return np.stack(np.broadcast_arrays(bx, by, a * eta_prime[..., 2], theta), axis=-1)


def inverse_arrays(eta: np.ndarray) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    c, s = np.cos(eta[..., 3]), np.sin(eta[..., 3])
    a = eta[..., 2]
    bx = -(c * eta[..., 0] + s * eta[..., 1]) / a
    by = -(-s * eta[..., 0] + c * eta[..., 1]) / a
    return np.stack([bx, by, 1.0 / a, np.mod(-eta[..., 3], TWO_PI)], axis=-1)


def angle_difference(theta1: float, theta2: float, period: float = TWO_PI) -> float:
    """Absolute angular gap folded into [0, period / 2]."""
    d = abs(theta1 - theta2) % period
    return min(d, period - d)


def params_close(eta1: TransformParams, eta2: TransformParams, tol: float = PARAM_TOL,
                 period: float = TWO_PI) -> bool:
    return (abs(eta1.bx - eta2.bx) <= tol and abs(eta1.by - eta2.by) <= tol
            and abs(eta1.a - eta2.a) <= tol
            and angle_difference(eta1.theta, eta2.theta, period) <= tol)


def distance_from_identity(eta: TransformParams) -> float:
    """||b|| + |log a| + |theta| folded; used to break objective ties."""
    return math.hypot(eta.bx, eta.by) + abs(math.log(eta.a)) + angle_difference(eta.theta, 0.0)


def center_conjugate(eta: TransformParams, center: Sequence[float], kind: GroupKind) -> TransformParams:
    """t_c o eta o t_c^-1: the same rotation/scale, taken about `center` instead of the origin."""
    shift = TransformParams(float(center[0]), float(center[1]))
    back = TransformParams(-float(center[0]), -float(center[1]))
    inner = compose(eta, back, kind)
    return compose(shift, inner, kind)


@dataclass(frozen=True)
class Stabilizer:
    """Finite subgroup of transformations leaving the mother function unchanged."""
    elements: tuple
    kind: GroupKind

    def __post_init__(self):
        if not self.elements:
            raise InvalidArgumentError("stabilizer needs at least the identity")
        if not any(e.is_identity(KIND_TOL) for e in self.elements):
            raise InvalidArgumentError("stabilizer must contain the identity")
        for e in self.elements:
            e.validate_for(self.kind)
        for e1 in self.elements:
            for e2 in self.elements:
                prod = compose(e1, e2, self.kind)
                if not any(params_close(prod, e, KIND_TOL) for e in self.elements):
                    raise InvalidArgumentError("stabilizer elements are not closed under composition")

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[TransformParams]:
        return iter(self.elements)

    @property
    def rotation_period(self) -> float:
        """Smallest angle after which atom orientations repeat (pi for the two-element group)."""
        return TWO_PI / len(self.elements)

    def contains(self, eta: TransformParams, tol: float = PARAM_TOL) -> bool:
        return any(params_close(eta, e, tol) for e in self.elements)

    def as_array(self) -> np.ndarray:
        return np.array([e.as_array() for e in self.elements])


def trivial_stabilizer(kind: GroupKind) -> Stabilizer:
    return Stabilizer((IDENTITY,), kind)


def stabilizer_of_gaussian(nu: float, kind: GroupKind) -> Stabilizer:
    """Stabilizer of exp(-(x/nu)^2 - y^2) inside the group `kind`."""
    kind = GroupKind.parse(kind)
    if nu <= 0:
        raise InvalidArgumentError(f"anisotropy must be positive, got nu={nu}")
    if not kind.has_rotation:
        return trivial_stabilizer(kind)
    if abs(nu - 1.0) <= KIND_TOL:
        raise InfiniteStabilizerError(
            "infinite stabilizer: an isotropic Gaussian is invariant under every rotation; "
            "collapse the rotation parameter instead")
    if nu < 1.0:
        raise InvalidArgumentError(f"anisotropy must satisfy nu >= 1, got nu={nu}")
    return Stabilizer((IDENTITY, TransformParams(0.0, 0.0, 1.0, math.pi)), kind)
