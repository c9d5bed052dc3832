"""
Images discrètes, géométrie L², action des transformations (warp) et lecture
des fichiers PGM / MNIST IDX.
"""
import gzip
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from errors import DataError, IdxFormatError, InvalidArgumentError, PgmParseError
from geometry import GroupKind, TransformParams, center_conjugate

logger = logging.getLogger(__name__)

# Configuration
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
PGM_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass(frozen=True, eq=False)
class Image:
    """Row-major grid of finite intensities; pixels[y, x] with unit pixel area."""
    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise InvalidArgumentError(f"image must be a non-empty 2-D grid, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise InvalidArgumentError("image contains non-finite pixels")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def zeros(cls, width: int, height: int) -> "Image":
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    @property
    def center(self) -> np.ndarray:
        return image_center(self.width, self.height)

    def __add__(self, other: "Image") -> "Image":
        check_dims(self, other)
        return Image(self.pixels + other.pixels)

    def __sub__(self, other: "Image") -> "Image":
        check_dims(self, other)
        return Image(self.pixels - other.pixels)

    def scaled(self, factor: float) -> "Image":
        return Image(self.pixels * factor)


def image_center(width: int, height: int) -> np.ndarray:
    return np.array([(width - 1) / 2.0, (height - 1) / 2.0])


def check_dims(f: Image, g: Image):
    if f.shape != g.shape:
        raise InvalidArgumentError(f"dimension mismatch: {f.shape} vs {g.shape}")


def l2_norm(img: Image) -> float:
    return float(np.sqrt(np.sum(img.pixels ** 2)))


def inner_product(f: Image, g: Image) -> float:
    check_dims(f, g)
    return float(np.sum(f.pixels * g.pixels))


def warp(img: Image, eta: TransformParams, kind: GroupKind) -> Image:
    """
    U(eta) on a raster: output(x) = a^-1 * bilinear(img, R_-theta (x - b) / a),
    zero outside the domain. Rotation and scale are about the coordinate origin.
    """
    eta.validate_for(kind)
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(float)
    c, s = math.cos(eta.theta), math.sin(eta.theta)
    dx, dy = xs - eta.bx, ys - eta.by
    src_x = (c * dx + s * dy) / eta.a
    src_y = (-s * dx + c * dy) / eta.a
    out = ndimage.map_coordinates(img.pixels, [src_y, src_x], order=1, mode="constant", cval=0.0)
    return Image(out / eta.a)


def warp_about_center(img: Image, eta: TransformParams, kind: GroupKind) -> Image:
    """Warp with rotation/scale taken about the image center."""
    return warp(img, center_conjugate(eta, img.center, kind), kind)


# --- PGM --------------------------------------------------------------------

def _skip_space_and_comments(data: bytes, pos: int) -> int:
    while pos < len(data):
        if data[pos] == ord("#"):
            while pos < len(data) and data[pos] not in b"\n\r":
                pos += 1
        elif data[pos] in PGM_WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _read_token(data: bytes, pos: int, what: str) -> tuple:
    pos = _skip_space_and_comments(data, pos)
    start = pos
    while pos < len(data) and data[pos] not in PGM_WHITESPACE and data[pos] != ord("#"):
        pos += 1
    token = data[start:pos]
    if not token:
        raise PgmParseError(f"missing {what}", start)
    if not token.isdigit():
        raise PgmParseError(f"malformed {what} '{token.decode('latin-1')}'", start)
    return int(token), pos


def parse_pgm(data: bytes) -> Image:
    """Parse binary P5 or ASCII P2 bytes; intensities scaled to [0, 1]."""
    if len(data) < 2 or data[:2] not in (b"P5", b"P2"):
        raise PgmParseError("bad magic, expected P5 or P2", 0)
    binary = data[:2] == b"P5"
    pos = 2
    width, pos = _read_token(data, pos, "width")
    height, pos = _read_token(data, pos, "height")
    maxval, pos = _read_token(data, pos, "maxval")
    if width <= 0 or height <= 0:
        raise PgmParseError(f"invalid dimensions {width}x{height}", pos)
    if not 0 < maxval <= 255:
        raise PgmParseError(f"unsupported maxval {maxval}, expected 8-bit", pos)
    count = width * height

    if binary:
        if pos >= len(data) or data[pos] not in PGM_WHITESPACE:
            raise PgmParseError("missing whitespace after maxval", pos)
        pos += 1
        if len(data) - pos < count:
            raise PgmParseError(f"truncated payload: {len(data) - pos} of {count} bytes", len(data))
        values = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos).astype(float)
    else:
        values = np.empty(count)
        for k in range(count):
            try:
                v, pos = _read_token(data, pos, f"sample {k}")
            except PgmParseError as e:
                raise PgmParseError(f"truncated payload: {k} of {count} samples", e.offset) from e
            if v > maxval:
                raise PgmParseError(f"sample {v} exceeds maxval {maxval}", pos)
            values[k] = v
    return Image(values.reshape(height, width) / maxval)


def encode_pgm(img: Image) -> bytes:
    """Binary P5, maxval 255, round-half-up quantization of [0, 1] intensities."""
    q = np.clip(np.floor(img.pixels * 255.0 + 0.5), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + q.tobytes()


def load_pgm(path: str) -> Image:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    img = parse_pgm(data)
    logger.debug(f"📥 PGM {path}: {img.width}x{img.height}")
    return img


def save_pgm(img: Image, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_pgm(img))


# --- MNIST IDX --------------------------------------------------------------

def _read_bytes(path: str) -> bytes:
    opener = gzip.open if path.endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def read_idx_images(path: str) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 16:
        raise IdxFormatError(f"{path}: header too short")
    magic, n, rows, cols = np.frombuffer(data, dtype=">u4", count=4)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{path}: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
    expected = int(n) * int(rows) * int(cols)
    if len(data) - 16 < expected:
        raise IdxFormatError(f"{path}: payload holds {len(data) - 16} bytes, header announces {expected}")
    return np.frombuffer(data, dtype=np.uint8, count=expected, offset=16).reshape(int(n), int(rows), int(cols))


def read_idx_labels(path: str) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 8:
        raise IdxFormatError(f"{path}: header too short")
    magic, n = np.frombuffer(data, dtype=">u4", count=2)
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{path}: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")
    if len(data) - 8 < int(n):
        raise IdxFormatError(f"{path}: payload holds {len(data) - 8} labels, header announces {n}")
    return np.frombuffer(data, dtype=np.uint8, count=int(n), offset=8)


def load_idx(images_path: str, labels_path: str, digit_filter: Iterable[int], per_class: int,
             seed: int, exclude: Optional[set] = None) -> list:
    """
    Seeded sample of `per_class` images per requested digit, as (Image, label)
    pairs ordered by digit. `exclude` holds dataset indices to skip, which keeps
    train and test draws disjoint.
    """
    if per_class < 0:
        raise InvalidArgumentError(f"per_class must be >= 0, got {per_class}")
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    return [(Image(images[i] / 255.0), int(labels[i]))
            for i in sample_idx_indices(labels, digit_filter, per_class, seed, exclude)]


def sample_idx_indices(labels: np.ndarray, digit_filter: Iterable[int], per_class: int, seed: int,
                       exclude: Optional[set] = None) -> list:
    rng = np.random.default_rng(seed)
    exclude = exclude or set()
    chosen = []
    for digit in sorted(set(digit_filter)):
        pool = np.array([i for i in np.flatnonzero(labels == digit) if int(i) not in exclude], dtype=int)
        if per_class > len(pool):
            raise DataError(f"digit {digit}: {per_class} requested, {len(pool)} available")
        chosen.extend(int(i) for i in rng.choice(pool, size=per_class, replace=False))
    return chosen
