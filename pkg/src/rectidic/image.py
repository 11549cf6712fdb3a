"""Grayscale rasters, sub-pixel sampling, Gaussian filtering and file I/O."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from . import _interp
from .errors import ImageIOError, InvalidParameter, OutOfBounds


class InterpolationKind(enum.Enum):
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"

    @property
    def code(self) -> int:
        return _interp.KIND_BILINEAR if self is InterpolationKind.BILINEAR else _interp.KIND_BICUBIC


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable row-major grayscale raster of finite float64 intensities.

    ``pixels[j, i]`` is the intensity at column ``i`` (x) and row ``j`` (y).
    Loaded images are normalized to [0, 1].
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidParameter(f"expected a non-empty 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameter("image contains non-finite intensities")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None


def sample(img: GrayImage, x: float, y: float,
           kind: InterpolationKind = InterpolationKind.BILINEAR) -> float:
    """Intensity at sub-pixel location ``(x, y)``.

    Raises OutOfBounds unless ``0 <= x <= width-1`` and ``0 <= y <= height-1``.
    """
    if not (0.0 <= x <= img.width - 1 and 0.0 <= y <= img.height - 1):
        raise OutOfBounds(f"({x}, {y}) outside {img.width}x{img.height} image")
    if kind is InterpolationKind.BILINEAR:
        return float(_interp.bilinear_at(img.pixels, float(x), float(y)))
    return float(_interp.bicubic_at(img.pixels, float(x), float(y)))


def sample_many(img: GrayImage, xs, ys, kind: InterpolationKind = InterpolationKind.BILINEAR,
                fill: float = 0.0) -> np.ndarray:
    """Vectorized :func:`sample`; out-of-domain coordinates receive ``fill``."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    shape = np.broadcast_shapes(xs.shape, ys.shape)
    xs = np.broadcast_to(xs, shape).ravel().copy()
    ys = np.broadcast_to(ys, shape).ravel().copy()
    out = np.empty(xs.size)
    _interp.sample_many(img.pixels, xs, ys, kind.code, float(fill), out)
    return out.reshape(shape)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled 1D Gaussian truncated at +-4 sigma and normalized to unit sum."""
    if not sigma > 0:
        raise InvalidParameter(f"sigma must be positive, got {sigma}")
    radius = max(1, int(math.ceil(4.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def blur_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    # blur the deviation from one pixel so constant regions stay bit-exact
    ref = arr.flat[0] if arr.size else 0.0
    tmp = correlate1d(arr - ref, k, axis=1, mode="nearest")
    return correlate1d(tmp, k, axis=0, mode="nearest") + ref


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur with edge-replicated borders."""
    return GrayImage(blur_array(img.pixels, sigma))


def load_image(path) -> GrayImage:
    """Read a PNG or binary PGM file into a [0, 1] image.

    8-bit data is divided by 255 and 16-bit data by 65535; colour inputs
    become the mean of their R, G, B channels.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode in ("L", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            elif mode in ("RGB", "RGBA", "P", "LA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = rgb.mean(axis=2) / 255.0
            else:
                raise ImageIOError(f"{path}: unsupported image mode {mode!r}")
    except ImageIOError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc
    return GrayImage(arr)


def save_image(img: GrayImage, path, bits: int = 8) -> None:
    """Write ``img`` as PNG or PGM (chosen by suffix), clipping to [0, 1] and quantizing."""
    path = Path(path)
    if bits not in (8, 16):
        raise InvalidParameter(f"bits must be 8 or 16, got {bits}")
    scale = 255.0 if bits == 8 else 65535.0
    q = np.rint(np.clip(img.pixels, 0.0, 1.0) * scale)
    q = q.astype(np.uint8 if bits == 8 else np.uint16)
    fmt = {".png": "PNG", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ImageIOError(f"{path}: unsupported output format (use .png or .pgm)")
    try:
        Image.fromarray(q).save(path, format=fmt)
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write image ({exc})") from exc
