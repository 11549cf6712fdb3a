"""Compiled inverse-compositional Gauss-Newton subset solver.

The objective is the ZNSSD between the zero-normalized reference subset and
the zero-normalized warped deformed subset.  Its Jacobian with respect to
the incremental reference-side warp is exact (including the derivative of
the mean and of the normalization) and is built once per subset.
"""

import math

import numpy as np
from numba import njit

from .._interp import KIND_BILINEAR, bicubic_at, bilinear_at

OK = 0
NOT_CONVERGED = 1
OUT_OF_BOUNDS = 2
FLAT_REFERENCE = 3
FLAT_DEFORMED = 4
SINGULAR = 5

_FLAT_TOL = 1e-10


@njit(cache=True, nogil=True)
def reference_subset(ref, cx, cy, M):
    """Intensities, offsets and raw warp Jacobian of the reference subset.

    Returns (ok, f, dx, dy, J0); J0 rows are dI/dp for p = (u, v, ux, uy, vx, vy)
    with image gradients from central differences.
    """
    h, w = ref.shape
    side = 2 * M + 1
    n = side * side
    f = np.empty(n)
    dxs = np.empty(n)
    dys = np.empty(n)
    J0 = np.empty((n, 6))
    if cx - M - 1 < 0 or cy - M - 1 < 0 or cx + M + 1 > w - 1 or cy + M + 1 > h - 1:
        return False, f, dxs, dys, J0
    k = 0
    for j in range(-M, M + 1):
        y = cy + j
        for i in range(-M, M + 1):
            x = cx + i
            f[k] = ref[y, x]
            gx = 0.5 * (ref[y, x + 1] - ref[y, x - 1])
            gy = 0.5 * (ref[y + 1, x] - ref[y - 1, x])
            dxs[k] = i
            dys[k] = j
            J0[k, 0] = gx
            J0[k, 1] = gy
            J0[k, 2] = gx * i
            J0[k, 3] = gx * j
            J0[k, 4] = gy * i
            J0[k, 5] = gy * j
            k += 1
    return True, f, dxs, dys, J0


@njit(cache=True, nogil=True)
def normalized_jacobian(f, J0):
    """Exact Jacobian of (f - mean f) / ||f - mean f|| and the normalized subset."""
    n = f.shape[0]
    fm = f.mean()
    fc = f - fm
    df = math.sqrt(np.sum(fc * fc))
    nf = fc / max(df, 1e-300)
    Jc = J0.copy()
    for c in range(6):
        Jc[:, c] -= J0[:, c].mean()
    t = nf @ Jc
    J = np.empty_like(Jc)
    for k in range(n):
        for c in range(6):
            J[k, c] = (Jc[k, c] - nf[k] * t[c]) / df
    return nf, df, J


@njit(cache=True, nogil=True)
def _warp_matrix(p):
    W = np.empty((3, 3))
    W[0, 0] = 1.0 + p[2]
    W[0, 1] = p[3]
    W[0, 2] = p[0]
    W[1, 0] = p[4]
    W[1, 1] = 1.0 + p[5]
    W[1, 2] = p[1]
    W[2, 0] = 0.0
    W[2, 1] = 0.0
    W[2, 2] = 1.0
    return W


@njit(cache=True, nogil=True)
def _sample_deformed(dimg, cx, cy, W, dxs, dys, kind, g):
    h, w = dimg.shape
    n = dxs.shape[0]
    if kind == KIND_BILINEAR:
        lo, hx, hy = 0.0, w - 1.0, h - 1.0
    else:
        lo, hx, hy = 1.0, w - 2.0, h - 2.0
    for k in range(n):
        x = cx + W[0, 0] * dxs[k] + W[0, 1] * dys[k] + W[0, 2]
        y = cy + W[1, 0] * dxs[k] + W[1, 1] * dys[k] + W[1, 2]
        if not (x >= lo and x <= hx and y >= lo and y <= hy):
            return False
        if kind == KIND_BILINEAR:
            g[k] = bilinear_at(dimg, x, y)
        else:
            g[k] = bicubic_at(dimg, x, y)
    return True


@njit(cache=True, nogil=True)
def _normalize(g):
    gm = g.mean()
    gc = g - gm
    dg = math.sqrt(np.sum(gc * gc))
    return gc, dg


@njit(cache=True, nogil=True)
def solve(ref, dimg, cx, cy, M, p0, kind, max_iter, tol, p_out):
    """Refine warp ``p0`` for the subset centred on integer pixel (cx, cy).

    Writes the final warp into ``p_out`` and returns (status, zncc, iterations).
    """
    for c in range(6):
        p_out[c] = p0[c]
    ok, f, dxs, dys, J0 = reference_subset(ref, cx, cy, M)
    if not ok:
        return OUT_OF_BOUNDS, np.nan, 0
    fc = f - f.mean()
    if math.sqrt(np.sum(fc * fc)) < _FLAT_TOL:
        return FLAT_REFERENCE, np.nan, 0
    nf, df, J = normalized_jacobian(f, J0)
    Hs = J.T @ J
    ev = np.linalg.eigvalsh(Hs)
    if ev[0] <= 1e-12 * ev[-1] or ev[-1] <= 0.0:
        return SINGULAR, np.nan, 0
    Hinv = np.linalg.inv(Hs)

    W = _warp_matrix(p_out)
    n = f.shape[0]
    g = np.empty(n)
    status = NOT_CONVERGED
    it = 0
    for it in range(1, max_iter + 1):
        if not _sample_deformed(dimg, cx, cy, W, dxs, dys, kind, g):
            status = OUT_OF_BOUNDS
            break
        gc, dg = _normalize(g)
        if dg < _FLAT_TOL:
            status = FLAT_DEFORMED
            break
        r = nf - gc / dg
        dp = -(Hinv @ (J.T @ r))
        W = W @ np.linalg.inv(_warp_matrix(dp))
        norm = math.sqrt(dp[0] * dp[0] + dp[1] * dp[1]
                         + M * M * (dp[2] * dp[2] + dp[3] * dp[3] + dp[4] * dp[4] + dp[5] * dp[5]))
        if not math.isfinite(norm):
            status = NOT_CONVERGED
            break
        if norm < tol:
            status = OK
            break

    p_out[0] = W[0, 2]
    p_out[1] = W[1, 2]
    p_out[2] = W[0, 0] - 1.0
    p_out[3] = W[0, 1]
    p_out[4] = W[1, 0]
    p_out[5] = W[1, 1] - 1.0
    if status == OUT_OF_BOUNDS or status == FLAT_DEFORMED:
        return status, np.nan, it
    if not _sample_deformed(dimg, cx, cy, W, dxs, dys, kind, g):
        return OUT_OF_BOUNDS, np.nan, it
    gc, dg = _normalize(g)
    if dg < _FLAT_TOL:
        return FLAT_DEFORMED, np.nan, it
    zncc = np.sum(nf * gc) / dg
    return status, zncc, it
