"""Scale-invariant key points: DoG pyramid, extrema, sub-pixel refinement,
orientation assignment and 128-d gradient-histogram descriptors.

Coordinates follow the raster convention used everywhere in the package:
x is the column, y is the row (pointing down).  Orientations are
``atan2(dI/dy, dI/dx)`` in that frame, wrapped to [0, 2*pi).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.ndimage import maximum_filter, minimum_filter

from .errors import InvalidParameter
from .image import GrayImage, blur_array, sample_many, InterpolationKind

ORI_BINS = 36
DESC_WIDTH = 4
DESC_BINS = 8
DESC_MAG_CLAMP = 0.2
ORI_RADIUS_FACTOR = 3.0
ORI_SIGMA_FACTOR = 1.5
DESC_SCALE_FACTOR = 3.0
MIN_OCTAVE_SIZE = 16
BORDER = 5


@dataclass(frozen=True)
class PyramidConfig:
    num_octaves: int = 4
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio_threshold: float = 10.0
    assumed_blur: float = 0.5
    upsample: bool = False
    peak_ratio: float = 0.8
    max_refine_iterations: int = 5

    def __post_init__(self):
        if self.num_octaves < 1:
            raise InvalidParameter("num_octaves must be >= 1")
        if self.scales_per_octave < 3:
            raise InvalidParameter("scales_per_octave must be >= 3")
        if not (self.base_sigma > 0 and self.contrast_threshold > 0 and self.edge_ratio_threshold > 0):
            raise InvalidParameter("sigma and thresholds must be positive")

    @property
    def k(self) -> float:
        return 2.0 ** (1.0 / self.scales_per_octave)


@dataclass
class ScaleSpacePyramid:
    """Per-octave stacks: ``gaussians[o]`` has shape (s+3, h, w), ``dogs[o]`` (s+2, h, w).

    ``dogs[o][i] == gaussians[o][i+1] - gaussians[o][i]``; DoG level i is
    labelled with the scale of its lower Gaussian, ``base_sigma * k**i``.
    """

    gaussians: list
    dogs: list
    config: PyramidConfig
    coord_scale: float = 1.0  # full-resolution pixels per octave-0 pixel

    @property
    def num_octaves(self) -> int:
        return len(self.gaussians)

    def level_sigma(self, octave: int, level: float) -> float:
        """Absolute scale of (possibly fractional) level ``level`` in ``octave``."""
        cfg = self.config
        return cfg.base_sigma * 2.0 ** (level / cfg.scales_per_octave) * 2.0 ** octave * self.coord_scale


@dataclass(frozen=True)
class Candidate:
    octave: int
    level: int
    ix: int
    iy: int


@dataclass(frozen=True)
class RefinedPoint:
    """Sub-pixel extremum in octave coordinates."""

    octave: int
    level: int
    x: float
    y: float
    level_offset: float
    value: float


@dataclass(eq=False)
class KeyPoint:
    x: float
    y: float
    sigma: float
    orientation: float = 0.0
    descriptor: np.ndarray = field(default_factory=lambda: np.zeros(128), repr=False)
    octave: int = field(default=0, repr=False)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "sigma": self.sigma, "orientation": self.orientation,
                "descriptor": [float(d) for d in self.descriptor]}

    @classmethod
    def from_dict(cls, d: dict) -> "KeyPoint":
        desc = np.asarray(d["descriptor"], dtype=np.float64)
        if desc.shape != (128,):
            raise InvalidParameter("descriptor must have 128 entries")
        return cls(float(d["x"]), float(d["y"]), float(d["sigma"]), float(d["orientation"]), desc)


# --------------------------------------------------------------------------
# Scale space
# --------------------------------------------------------------------------

def _octave_count(height: int, width: int, requested: int) -> int:
    n = 0
    size = min(height, width)
    while n < requested and size >= MIN_OCTAVE_SIZE:
        n += 1
        size = (size + 1) // 2
    return max(n, 1)


def build_pyramid(img: GrayImage, cfg: PyramidConfig = PyramidConfig()) -> ScaleSpacePyramid:
    s = cfg.scales_per_octave
    k = cfg.k
    base = img.pixels
    assumed = cfg.assumed_blur
    coord_scale = 1.0
    if cfg.upsample:
        h, w = base.shape
        ys, xs = np.mgrid[0:2 * h - 1, 0:2 * w - 1] * 0.5
        base = sample_many(img, xs, ys, InterpolationKind.BILINEAR)
        assumed *= 2.0
        coord_scale = 0.5
    diff = math.sqrt(max(cfg.base_sigma ** 2 - assumed ** 2, 0.01))
    current = blur_array(base, diff)

    increments = [cfg.base_sigma * math.sqrt(k ** (2 * i) - k ** (2 * (i - 1))) for i in range(1, s + 3)]
    n_oct = _octave_count(*current.shape, cfg.num_octaves)
    gaussians, dogs = [], []
    for o in range(n_oct):
        levels = [current]
        for inc in increments:
            levels.append(blur_array(levels[-1], inc))
        stack = np.stack(levels)
        gaussians.append(stack)
        dogs.append(stack[1:] - stack[:-1])
        # level s carries twice the base scale; decimate it for the next octave
        current = stack[s][::2, ::2].copy()
    return ScaleSpacePyramid(gaussians, dogs, cfg, coord_scale)


def detect_extrema(pyr: ScaleSpacePyramid, threshold: float = 0.0) -> list[Candidate]:
    """Strict 26-neighbour extrema of every interior DoG level.

    Pixels closer than ``BORDER`` to the edge and the first/last DoG level of
    each octave are never candidates.  ``threshold`` optionally drops
    candidates with ``|D| <= threshold`` before refinement.
    """
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    out = []
    for o, dog in enumerate(pyr.dogs):
        if dog.shape[0] < 3:
            continue
        nb_max = maximum_filter(dog, footprint=footprint, mode="nearest")
        nb_min = minimum_filter(dog, footprint=footprint, mode="nearest")
        is_ext = (dog > nb_max) | (dog < nb_min)
        if threshold > 0:
            is_ext &= np.abs(dog) > threshold
        is_ext[0] = is_ext[-1] = False
        is_ext[:, :BORDER, :] = is_ext[:, -BORDER:, :] = False
        is_ext[:, :, :BORDER] = is_ext[:, :, -BORDER:] = False
        for lvl, iy, ix in zip(*np.nonzero(is_ext)):
            out.append(Candidate(o, int(lvl), int(ix), int(iy)))
    return out


# --------------------------------------------------------------------------
# Compiled kernels
# --------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _iround(v):
    return int(math.floor(v + 0.5))


@njit(cache=True)
def _derivatives(dog, l, y, x):
    g = np.empty(3)
    H = np.empty((3, 3))
    c = dog[l, y, x]
    g[0] = 0.5 * (dog[l, y, x + 1] - dog[l, y, x - 1])
    g[1] = 0.5 * (dog[l, y + 1, x] - dog[l, y - 1, x])
    g[2] = 0.5 * (dog[l + 1, y, x] - dog[l - 1, y, x])
    H[0, 0] = dog[l, y, x + 1] + dog[l, y, x - 1] - 2.0 * c
    H[1, 1] = dog[l, y + 1, x] + dog[l, y - 1, x] - 2.0 * c
    H[2, 2] = dog[l + 1, y, x] + dog[l - 1, y, x] - 2.0 * c
    H[0, 1] = H[1, 0] = 0.25 * (dog[l, y + 1, x + 1] - dog[l, y + 1, x - 1]
                                - dog[l, y - 1, x + 1] + dog[l, y - 1, x - 1])
    H[0, 2] = H[2, 0] = 0.25 * (dog[l + 1, y, x + 1] - dog[l + 1, y, x - 1]
                                - dog[l - 1, y, x + 1] + dog[l - 1, y, x - 1])
    H[1, 2] = H[2, 1] = 0.25 * (dog[l + 1, y + 1, x] - dog[l + 1, y - 1, x]
                                - dog[l - 1, y + 1, x] + dog[l - 1, y - 1, x])
    return g, H


@njit(cache=True)
def _newton_offset(g, H):
    """h = -H^-1 g by cofactors; ok is False for a singular Hessian."""
    a, b, c = H[0, 0], H[0, 1], H[0, 2]
    d, e, f = H[1, 0], H[1, 1], H[1, 2]
    p, q, r = H[2, 0], H[2, 1], H[2, 2]
    c00 = e * r - f * q
    c01 = -(d * r - f * p)
    c02 = d * q - e * p
    det = a * c00 + b * c01 + c * c02
    h = np.zeros(3)
    scale = max(abs(a), abs(e), abs(r), 1e-300)
    if abs(det) <= 1e-12 * scale ** 3:
        return False, h
    inv = np.empty((3, 3))
    inv[0, 0] = c00 / det
    inv[1, 0] = c01 / det
    inv[2, 0] = c02 / det
    inv[0, 1] = -(b * r - c * q) / det
    inv[1, 1] = (a * r - c * p) / det
    inv[2, 1] = -(a * q - b * p) / det
    inv[0, 2] = (b * f - c * e) / det
    inv[1, 2] = -(a * f - c * d) / det
    inv[2, 2] = (a * e - b * d) / det
    for i in range(3):
        h[i] = -(inv[i, 0] * g[0] + inv[i, 1] * g[1] + inv[i, 2] * g[2])
    return True, h


@njit(cache=True)
def _refine(dog, l, y, x, contrast, edge_r, max_iter, border):
    """Returns (status, l, y, x, hx, hy, hl, value); status 0 means accepted.

    Status codes: 1 singular, 2 left the grid, 3 no convergence,
    4 low contrast, 5 edge response.
    """
    nl, h, w = dog.shape
    hv = np.zeros(3)
    converged = False
    for _ in range(max_iter):
        g, H = _derivatives(dog, l, y, x)
        ok, hv = _newton_offset(g, H)
        if not ok:
            return 1, l, y, x, 0.0, 0.0, 0.0, 0.0
        if abs(hv[0]) <= 0.5 and abs(hv[1]) <= 0.5 and abs(hv[2]) <= 0.5:
            converged = True
            break
        x += _iround((hv[0]))
        y += _iround((hv[1]))
        l += _iround((hv[2]))
        if l < 1 or l > nl - 2 or x < border or x >= w - border or y < border or y >= h - border:
            return 2, l, y, x, 0.0, 0.0, 0.0, 0.0
    if not converged:
        return 3, l, y, x, 0.0, 0.0, 0.0, 0.0
    g, H = _derivatives(dog, l, y, x)
    value = dog[l, y, x] + 0.5 * (g[0] * hv[0] + g[1] * hv[1] + g[2] * hv[2])
    if abs(value) < contrast:
        return 4, l, y, x, hv[0], hv[1], hv[2], value
    tr = H[0, 0] + H[1, 1]
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[0, 1]
    if det <= 0.0 or tr * tr * edge_r >= (edge_r + 1.0) ** 2 * det:
        return 5, l, y, x, hv[0], hv[1], hv[2], value
    return 0, l, y, x, hv[0], hv[1], hv[2], value


@njit(cache=True)
def _orientation_histogram(img, x, y, scale, nbins):
    h, w = img.shape
    radius = _iround((ORI_RADIUS_FACTOR * ORI_SIGMA_FACTOR * scale))
    sig = ORI_SIGMA_FACTOR * scale
    xi = _iround((x))
    yi = _iround((y))
    hist = np.zeros(nbins)
    if xi - radius - 1 < 0 or yi - radius - 1 < 0 or xi + radius + 1 > w - 1 or yi + radius + 1 > h - 1:
        return False, hist
    inv2s2 = 1.0 / (2.0 * sig * sig)
    r2max = radius * radius
    for dy in range(-radius, radius + 1):
        yy = yi + dy
        for dx in range(-radius, radius + 1):
            if dx * dx + dy * dy > r2max:
                continue
            xx = xi + dx
            gx = img[yy, xx + 1] - img[yy, xx - 1]
            gy = img[yy + 1, xx] - img[yy - 1, xx]
            mag = math.sqrt(gx * gx + gy * gy)
            ang = math.atan2(gy, gx)
            b = _iround((ang * nbins / (2.0 * np.pi))) % nbins
            hist[b] += math.exp(-(dx * dx + dy * dy) * inv2s2) * mag
    # circular [1 4 6 4 1] / 16 smoothing
    sm = np.empty(nbins)
    for i in range(nbins):
        sm[i] = (hist[(i - 2) % nbins] + hist[(i + 2) % nbins]
                 + 4.0 * (hist[(i - 1) % nbins] + hist[(i + 1) % nbins])
                 + 6.0 * hist[i]) / 16.0
    return True, sm


@njit(cache=True)
def _histogram_peaks(hist, ratio):
    n = hist.shape[0]
    peak = hist.max()
    out = np.empty(n)
    count = 0
    if peak <= 0.0:
        return out[:0]
    for i in range(n):
        left = hist[(i - 1) % n]
        right = hist[(i + 1) % n]
        c = hist[i]
        if c > left and c > right and c >= ratio * peak:
            denom = left - 2.0 * c + right
            off = 0.5 * (left - right) / denom if denom != 0.0 else 0.0
            ang = (i + off) * 2.0 * np.pi / n
            ang = ang % (2.0 * np.pi)
            if ang >= 2.0 * np.pi:
                ang = 0.0
            out[count] = ang
            count += 1
    return out[:count]


@njit(cache=True)
def _descriptor(img, x, y, scale, ori):
    d = DESC_WIDTH
    n = DESC_BINS
    h, w = img.shape
    hist_width = DESC_SCALE_FACTOR * scale
    radius = _iround((hist_width * np.sqrt(2.0) * (d + 1) * 0.5))
    xi = _iround((x))
    yi = _iround((y))
    out = np.zeros(d * d * n)
    if xi - radius - 1 < 0 or yi - radius - 1 < 0 or xi + radius + 1 > w - 1 or yi + radius + 1 > h - 1:
        return False, out
    cos_t = math.cos(ori) / hist_width
    sin_t = math.sin(ori) / hist_width
    fx = x - xi
    fy = y - yi
    hist = np.zeros((d + 2, d + 2, n))
    wscale = -1.0 / (0.5 * d * d)
    bins_per_rad = n / (2.0 * np.pi)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ox = dx - fx
            oy = dy - fy
            a = ox * cos_t + oy * sin_t
            b = -ox * sin_t + oy * cos_t
            rbin = b + d / 2.0 - 0.5
            cbin = a + d / 2.0 - 0.5
            if rbin <= -1.0 or rbin >= d or cbin <= -1.0 or cbin >= d:
                continue
            yy = yi + dy
            xx = xi + dx
            gx = img[yy, xx + 1] - img[yy, xx - 1]
            gy = img[yy + 1, xx] - img[yy - 1, xx]
            mag = math.sqrt(gx * gx + gy * gy) * math.exp((a * a + b * b) * wscale)
            ang = (math.atan2(gy, gx) - ori) % (2.0 * np.pi)
            obin = ang * bins_per_rad
            r0 = int(np.floor(rbin))
            c0 = int(np.floor(cbin))
            o0 = int(np.floor(obin))
            dr = rbin - r0
            dc = cbin - c0
            do = obin - o0
            for ir in range(2):
                wr = dr if ir == 1 else 1.0 - dr
                for ic in range(2):
                    wc = dc if ic == 1 else 1.0 - dc
                    for io in range(2):
                        wo = do if io == 1 else 1.0 - do
                        hist[r0 + 1 + ir, c0 + 1 + ic, (o0 + io) % n] += mag * wr * wc * wo
    k = 0
    for r in range(d):
        for c in range(d):
            for o in range(n):
                out[k] = hist[r + 1, c + 1, o]
                k += 1
    norm = np.sqrt(np.sum(out * out))
    if norm <= 1e-12:
        return False, out
    out /= norm
    for i in range(out.shape[0]):
        if out[i] > DESC_MAG_CLAMP:
            out[i] = DESC_MAG_CLAMP
    out /= np.sqrt(np.sum(out * out))
    return True, out


# --------------------------------------------------------------------------
# Public per-step operations
# --------------------------------------------------------------------------

def quadratic_offset(cube: np.ndarray):
    """Newton offset (dx, dy, dlevel) of the quadratic fit to a 3x3x3 DoG neighbourhood.

    ``cube`` is indexed [level, y, x].  Returns None for a singular Hessian.
    """
    cube = np.ascontiguousarray(cube, dtype=np.float64)
    if cube.shape != (3, 3, 3):
        raise InvalidParameter("expected a 3x3x3 neighbourhood")
    g, H = _derivatives(cube, 1, 1, 1)
    ok, h = _newton_offset(g, H)
    return h if ok else None


def refine_keypoint(pyr: ScaleSpacePyramid, cand: Candidate) -> RefinedPoint | None:
    """Sub-pixel/sub-level location of ``cand`` or None when rejected."""
    cfg = pyr.config
    dog = pyr.dogs[cand.octave]
    status, l, y, x, hx, hy, hl, value = _refine(
        dog, cand.level, cand.iy, cand.ix, cfg.contrast_threshold,
        cfg.edge_ratio_threshold, cfg.max_refine_iterations, BORDER)
    if status != 0:
        return None
    return RefinedPoint(cand.octave, l, x + hx, y + hy, hl, value)


def _octave_scale(pyr: ScaleSpacePyramid, rp: RefinedPoint) -> float:
    return pyr.config.base_sigma * 2.0 ** ((rp.level + rp.level_offset) / pyr.config.scales_per_octave)


def _to_keypoint(pyr: ScaleSpacePyramid, rp: RefinedPoint, orientation: float) -> KeyPoint:
    f = 2.0 ** rp.octave * pyr.coord_scale
    return KeyPoint(rp.x * f, rp.y * f, pyr.level_sigma(rp.octave, rp.level + rp.level_offset),
                    orientation, np.zeros(128), rp.octave)


def dominant_orientations(level_img: np.ndarray, x: float, y: float, scale: float,
                          peak_ratio: float = 0.8) -> np.ndarray | None:
    """Orientation peaks of the Gaussian-weighted gradient histogram around (x, y).

    Returns None when the sampling window leaves the image.
    """
    ok, hist = _orientation_histogram(np.ascontiguousarray(level_img, dtype=np.float64),
                                      float(x), float(y), float(scale), ORI_BINS)
    if not ok:
        return None
    return _histogram_peaks(hist, peak_ratio)


def assign_orientation(pyr: ScaleSpacePyramid, rp: RefinedPoint) -> list[KeyPoint]:
    img = pyr.gaussians[rp.octave][rp.level]
    peaks = dominant_orientations(img, rp.x, rp.y, _octave_scale(pyr, rp), pyr.config.peak_ratio)
    if peaks is None:
        return []
    return [_to_keypoint(pyr, rp, float(a)) for a in peaks]


def descriptor_at(level_img: np.ndarray, x: float, y: float, scale: float,
                  orientation: float) -> np.ndarray | None:
    ok, desc = _descriptor(np.ascontiguousarray(level_img, dtype=np.float64),
                           float(x), float(y), float(scale), float(orientation))
    return desc if ok else None


def compute_descriptor(pyr: ScaleSpacePyramid, rp: RefinedPoint, kp: KeyPoint) -> np.ndarray | None:
    img = pyr.gaussians[rp.octave][rp.level]
    return descriptor_at(img, rp.x, rp.y, _octave_scale(pyr, rp), kp.orientation)


def extract(img: GrayImage, cfg: PyramidConfig = PyramidConfig()) -> list[KeyPoint]:
    """Detect and describe key points; output sorted by (y, x, sigma, orientation)."""
    if img.width < 32 or img.height < 32:
        raise InvalidParameter(f"image must be at least 32x32, got {img.width}x{img.height}")
    pyr = build_pyramid(img, cfg)
    cands = detect_extrema(pyr, threshold=0.5 * cfg.contrast_threshold)
    kps = []
    for cand in cands:
        rp = refine_keypoint(pyr, cand)
        if rp is None:
            continue
        for kp in assign_orientation(pyr, rp):
            desc = compute_descriptor(pyr, rp, kp)
            if desc is not None:
                kp.descriptor = desc
                kps.append(kp)
    kps.sort(key=lambda k: (k.y, k.x, k.sigma, k.orientation))
    return kps


def descriptor_matrix(kps: list[KeyPoint]) -> np.ndarray:
    if not kps:
        return np.zeros((0, 128))
    return np.stack([k.descriptor for k in kps])


def save_keypoints(kps: list[KeyPoint], path) -> None:
    Path(path).write_text(json.dumps([k.to_dict() for k in kps]))


def load_keypoints(path) -> list[KeyPoint]:
    return [KeyPoint.from_dict(d) for d in json.loads(Path(path).read_text())]
