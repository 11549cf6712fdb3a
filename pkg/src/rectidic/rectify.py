"""Backward-mapped homography warps."""

from __future__ import annotations

import numpy as np

from . import _interp
from .errors import InvalidParameter
from .homography import Homography
from .image import GrayImage, InterpolationKind


def rectify_image(img: GrayImage, h: Homography, fill: float = 0.0,
                  kind: InterpolationKind = InterpolationKind.BILINEAR,
                  shape: tuple[int, int] | None = None) -> GrayImage:
    """Resample ``img`` so that ``out(x, y) = img(H [x, y, 1])``.

    Source locations outside the input (or on the far side of the horizon
    line) take ``fill``.  The output has the input's shape unless ``shape``
    (rows, cols) is given.
    """
    m = h.matrix if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) <= 1e-12:
        raise InvalidParameter("rectification needs an invertible 3x3 homography")
    if not np.isfinite(fill):
        raise InvalidParameter("fill value must be finite")
    out = np.empty(shape if shape is not None else img.shape)
    _interp.warp_homography(img.pixels, np.ascontiguousarray(m, dtype=np.float64),
                            kind.code, float(fill), out)
    return GrayImage(out)


def translation(dx: float, dy: float) -> Homography:
    return Homography(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]]))

