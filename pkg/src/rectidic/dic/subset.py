"""Single-subset registration: integer seed search and IC-GN refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.signal import fftconvolve

from ..errors import DegenerateSubset, InvalidParameter, OutOfBounds
from ..image import GrayImage, InterpolationKind
from . import _icgn
from .correlation import Criterion, WarpParams

STATUS_NAMES = {
    _icgn.OK: "ok",
    _icgn.NOT_CONVERGED: "not_converged",
    _icgn.OUT_OF_BOUNDS: "out_of_bounds",
    _icgn.FLAT_REFERENCE: "flat_reference",
    _icgn.FLAT_DEFORMED: "flat_deformed",
    _icgn.SINGULAR: "singular",
}


@dataclass(frozen=True)
class SubsetParams:
    """Subset matching settings; a subset spans ``2 * half_width + 1`` pixels."""

    half_width: int = 11
    spacing: int = 5
    criterion: Criterion = Criterion.ZNSSD
    interpolation: InterpolationKind = InterpolationKind.BICUBIC
    max_iterations: int = 50
    convergence_tol: float = 1e-4
    seed_min_zncc: float = 0.8
    min_zncc: float = 0.5

    def __post_init__(self):
        if self.half_width < 5:
            raise InvalidParameter("half_width must be >= 5")
        if self.spacing < 1:
            raise InvalidParameter("spacing must be >= 1")
        if self.criterion not in (Criterion.ZNSSD, Criterion.ZNCC):
            raise InvalidParameter("subset optimization supports the ZNSSD/ZNCC criteria only")
        if self.max_iterations < 1 or not self.convergence_tol > 0:
            raise InvalidParameter("bad convergence settings")

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1

    @classmethod
    def from_size(cls, size: int, **kw) -> "SubsetParams":
        if size % 2 != 1:
            raise InvalidParameter(f"subset size must be odd, got {size}")
        return cls(half_width=size // 2, **kw)


@dataclass(frozen=True)
class SubsetResult:
    p: WarpParams
    zncc: float
    iterations: int
    status: int

    @property
    def converged(self) -> bool:
        return self.status == _icgn.OK

    @property
    def status_name(self) -> str:
        return STATUS_NAMES.get(self.status, str(self.status))


def _center(center) -> tuple[int, int]:
    cx, cy = center
    if int(cx) != cx or int(cy) != cy:
        raise InvalidParameter("subset centres must be integer pixel positions")
    return int(cx), int(cy)


def optimize_subset(ref: GrayImage, deformed: GrayImage, center, p0: WarpParams = WarpParams(),
                    params: SubsetParams = SubsetParams()) -> SubsetResult:
    """IC-GN minimization of ZNSSD for one subset, starting from ``p0``.

    Raises OutOfBounds when the subset leaves either image and
    DegenerateSubset for a textureless reference subset.  A run that hits
    ``max_iterations`` is returned with ``converged == False``.
    """
    cx, cy = _center(center)
    out = np.empty(6)
    status, zncc, it = _icgn.solve(ref.pixels, deformed.pixels, cx, cy, params.half_width,
                                   p0.as_array(), params.interpolation.code,
                                   params.max_iterations, params.convergence_tol, out)
    if status == _icgn.OUT_OF_BOUNDS:
        raise OutOfBounds(f"subset at ({cx}, {cy}) leaves the image")
    if status in (_icgn.FLAT_REFERENCE, _icgn.FLAT_DEFORMED, _icgn.SINGULAR):
        raise DegenerateSubset(f"subset at ({cx}, {cy}): {STATUS_NAMES[status]}")
    return SubsetResult(WarpParams.from_array(out), float(zncc), int(it), int(status))


def zncc_search_map(ref: GrayImage, deformed: GrayImage, center, search_radius: int,
                    half_width: int):
    """ZNCC of the reference subset at every integer shift inside the search window.

    Returns (zncc map indexed [dv, du] relative to the window, u offset, v offset):
    shift (u, v) = (j + u_off, i + v_off) for map index [i, j].  Shifts whose
    deformed subset would leave the image are excluded from the window.
    """
    cx, cy = _center(center)
    M = half_width
    h, w = ref.shape
    if cx - M < 0 or cy - M < 0 or cx + M > w - 1 or cy + M > h - 1:
        raise OutOfBounds(f"seed subset at ({cx}, {cy}) leaves the reference image")
    dh, dw = deformed.shape
    x0 = max(cx - M - search_radius, 0)
    y0 = max(cy - M - search_radius, 0)
    x1 = min(cx + M + search_radius + 1, dw)
    y1 = min(cy + M + search_radius + 1, dh)
    side = 2 * M + 1
    if x1 - x0 < side or y1 - y0 < side:
        raise OutOfBounds("search window does not contain a full subset")
    f = ref.pixels[cy - M:cy + M + 1, cx - M:cx + M + 1]
    fc = f - f.mean()
    df = np.sqrt(np.sum(fc * fc))
    if not df > 0:
        raise DegenerateSubset("seed subset has zero variance")
    win = deformed.pixels[y0:y1, x0:x1]
    num = fftconvolve(win, fc[::-1, ::-1], mode="valid")
    c1 = np.pad(win, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    c2 = np.pad(win * win, ((1, 0), (1, 0))).cumsum(0).cumsum(1)

    def box(c):
        return c[side:, side:] - c[:-side, side:] - c[side:, :-side] + c[:-side, :-side]

    n = side * side
    s1 = box(c1)
    var = box(c2) - s1 * s1 / n
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(var > 1e-12, num / (df * np.sqrt(np.maximum(var, 1e-300))), -1.0)
    z = np.clip(z, -1.0, 1.0)
    return z, x0 + M - cx, y0 + M - cy


def seed_initial_guess(ref: GrayImage, deformed: GrayImage, seed_center, search_radius: int,
                       half_width: int = 11) -> WarpParams:
    """Integer translation maximizing ZNCC over +-search_radius; gradients start at 0."""
    return seed_candidates(ref, deformed, seed_center, search_radius, half_width, 1)[0][0]


def seed_candidates(ref: GrayImage, deformed: GrayImage, seed_center, search_radius: int,
                    half_width: int = 11, count: int = 5) -> list[tuple[WarpParams, float]]:
    """The ``count`` best local ZNCC maxima of the integer search, best first."""
    z, uo, vo = zncc_search_map(ref, deformed, seed_center, search_radius, half_width)
    peaks = (z == maximum_filter(z, size=3, mode="nearest"))
    iy, ix = np.nonzero(peaks)
    vals = z[iy, ix]
    order = np.lexsort((ix, iy, -vals))[:count]
    return [(WarpParams(float(ix[k] + uo), float(iy[k] + vo)), float(vals[k])) for k in order]


def refine_seed(ref: GrayImage, deformed: GrayImage, seed_center, search_radius: int,
                params: SubsetParams = SubsetParams(), candidates: int = 5) -> SubsetResult:
    """Seed estimate robust to spurious integer peaks.

    The best few ZNCC maxima of the integer search are each refined by IC-GN and
    the converged result with the highest final ZNCC is kept.  Raises
    DegenerateSubset if none of them converges.
    """
    best = None
    for p0, _ in seed_candidates(ref, deformed, seed_center, search_radius,
                                 params.half_width, candidates):
        try:
            res = optimize_subset(ref, deformed, seed_center, p0, params)
        except (OutOfBounds, DegenerateSubset):
            continue
        if res.converged and (best is None or res.zncc > best.zncc):
            best = res
    if best is None:
        raise DegenerateSubset("no seed candidate converged")
    return best
