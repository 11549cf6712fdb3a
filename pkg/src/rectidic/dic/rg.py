"""Reliability-guided propagation over a correlation grid."""

from __future__ import annotations

import heapq

import numpy as np

from ..errors import DegenerateSubset, OutOfBounds, SeedFailed
from ..image import GrayImage
from . import _icgn
from .correlation import WarpParams
from .field import LOW_ZNCC, DisplacementField, RoiMask
from .subset import SubsetParams, optimize_subset

_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def rg_dic(ref: GrayImage, deformed: GrayImage, roi: RoiMask, params: SubsetParams,
           p0_seed: WarpParams, trace: list | None = None) -> DisplacementField:
    """Full-field correlation in order of decreasing ZNCC.

    The seed node is optimized from ``p0_seed``; afterwards every popped node
    hands its affine warp, transported to each uncomputed 4-neighbour, as that
    neighbour's initial guess.  Nodes that fail or fall below
    ``params.min_zncc`` are stored as invalid and never propagate.  ROI nodes
    not 4-connected to the seed keep the UNREACHABLE status.

    If ``trace`` is a list, ("push"|"pop", row, col, zncc) events are appended.
    """
    sr, sc = roi.seed
    sx, sy = roi.node_xy(sr, sc)
    meta = {"half_width": params.half_width, "spacing": roi.spacing,
            "interpolation": params.interpolation.name.lower(),
            "criterion": params.criterion.name.lower(),
            "max_iterations": params.max_iterations,
            "convergence_tol": params.convergence_tol, "min_zncc": params.min_zncc}
    out = DisplacementField.empty(roi, meta)
    try:
        seed = optimize_subset(ref, deformed, (sx, sy), p0_seed, params)
    except (OutOfBounds, DegenerateSubset) as exc:
        raise SeedFailed(f"seed optimization failed at ({sx}, {sy}): {exc}") from exc
    if not seed.converged or not seed.zncc >= params.seed_min_zncc:
        raise SeedFailed(f"seed at ({sx}, {sy}) reached zncc {seed.zncc:.3f} "
                         f"(status {seed.status_name}), need {params.seed_min_zncc}")

    ny, nx = roi.shape
    P = np.full((ny, nx, 6), np.nan)
    done = np.zeros((ny, nx), dtype=bool)
    rp, dp = ref.pixels, deformed.pixels
    M, kind = params.half_width, params.interpolation.code
    buf = np.empty(6)

    def store(i, j, status, zncc, p):
        P[i, j] = p
        out.u[i, j], out.v[i, j] = p[0], p[1]
        out.zncc[i, j] = zncc
        ok = status == _icgn.OK and zncc >= params.min_zncc
        out.valid[i, j] = ok
        out.status[i, j] = status if status != _icgn.OK or ok else LOW_ZNCC
        return ok

    heap = []
    counter = 0
    done[sr, sc] = True
    store(sr, sc, _icgn.OK, seed.zncc, seed.p.as_array())
    heapq.heappush(heap, (-seed.zncc, counter, sr, sc))
    if trace is not None:
        trace.append(("push", sr, sc, seed.zncc))
    step = roi.spacing
    while heap:
        negz, _, i, j = heapq.heappop(heap)
        if trace is not None:
            trace.append(("pop", i, j, -negz))
        p = P[i, j]
        for di, dj in _NEIGHBOURS:
            a, b = i + di, j + dj
            if a < 0 or b < 0 or a >= ny or b >= nx or done[a, b] or not roi.mask[a, b]:
                continue
            done[a, b] = True
            ox, oy = dj * step, di * step
            p0 = np.array([p[0] + p[2] * ox + p[3] * oy, p[1] + p[4] * ox + p[5] * oy,
                           p[2], p[3], p[4], p[5]])
            x, y = roi.node_xy(a, b)
            status, zncc, _ = _icgn.solve(rp, dp, x, y, M, p0, kind,
                                          params.max_iterations, params.convergence_tol, buf)
            if store(a, b, status, zncc, buf.copy()):
                counter += 1
                heapq.heappush(heap, (-zncc, counter, a, b))
                if trace is not None:
                    trace.append(("push", a, b, zncc))
    return out
