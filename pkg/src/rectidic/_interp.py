"""Compiled interpolation kernels shared by the image, rectify and DIC code.

Bicubic is the Keys cubic-convolution kernel with a = -0.5.  Neighbours that
fall outside the raster are clamped to the nearest edge pixel.
"""

import numpy as np
from numba import njit

KIND_BILINEAR = 0
KIND_BICUBIC = 1


@njit(cache=True, inline="always")
def _keys_weights(t):
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return w0, w1, w2, w3


@njit(cache=True, inline="always")
def _clamp(i, n):
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


@njit(cache=True)
def bilinear_at(img, x, y):
    h, w = img.shape
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    if x0 > w - 2:
        x0 = max(w - 2, 0)
    if y0 > h - 2:
        y0 = max(h - 2, 0)
    tx = x - x0
    ty = y - y0
    x1 = _clamp(x0 + 1, w)
    y1 = _clamp(y0 + 1, h)
    top = (1.0 - tx) * img[y0, x0] + tx * img[y0, x1]
    bot = (1.0 - tx) * img[y1, x0] + tx * img[y1, x1]
    return (1.0 - ty) * top + ty * bot


@njit(cache=True)
def bicubic_at(img, x, y):
    h, w = img.shape
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    wx0, wx1, wx2, wx3 = _keys_weights(x - x0)
    wy0, wy1, wy2, wy3 = _keys_weights(y - y0)
    acc = 0.0
    for j in range(4):
        yy = _clamp(y0 - 1 + j, h)
        if j == 0:
            wy = wy0
        elif j == 1:
            wy = wy1
        elif j == 2:
            wy = wy2
        else:
            wy = wy3
        row = (wx0 * img[yy, _clamp(x0 - 1, w)]
               + wx1 * img[yy, _clamp(x0, w)]
               + wx2 * img[yy, _clamp(x0 + 1, w)]
               + wx3 * img[yy, _clamp(x0 + 2, w)])
        acc += wy * row
    return acc


@njit(cache=True)
def sample_many(img, xs, ys, kind, fill, out):
    """Sample at every (xs[i], ys[i]); coordinates outside [0, n-1] get ``fill``."""
    h, w = img.shape
    n = xs.shape[0]
    for i in range(n):
        x = xs[i]
        y = ys[i]
        if not (x >= 0.0 and x <= w - 1 and y >= 0.0 and y <= h - 1):
            out[i] = fill
        elif kind == KIND_BILINEAR:
            out[i] = bilinear_at(img, x, y)
        else:
            out[i] = bicubic_at(img, x, y)
    return out


@njit(cache=True)
def warp_homography(img, hmat, kind, fill, out):
    """Backward-map every output pixel through ``hmat`` and sample ``img``."""
    oh, ow = out.shape
    h, w = img.shape
    for yi in range(oh):
        for xi in range(ow):
            den = hmat[2, 0] * xi + hmat[2, 1] * yi + hmat[2, 2]
            if den <= 0.0:
                out[yi, xi] = fill
                continue
            sx = (hmat[0, 0] * xi + hmat[0, 1] * yi + hmat[0, 2]) / den
            sy = (hmat[1, 0] * xi + hmat[1, 1] * yi + hmat[1, 2]) / den
            if not (sx >= 0.0 and sx <= w - 1 and sy >= 0.0 and sy <= h - 1):
                out[yi, xi] = fill
            elif kind == KIND_BILINEAR:
                out[yi, xi] = bilinear_at(img, sx, sy)
            else:
                out[yi, xi] = bicubic_at(img, sx, sy)
    return out
