"""Descriptor matching, DLT / RANSAC homography estimation and averaging.

A homography maps source points ``(x, y)`` to destination points
``(xp, yp)``: ``lambda * [xp, yp, 1]^T = H [x, y, 1]^T`` with ``H[2, 2] = 1``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateConfiguration, EstimationFailed, InvalidParameter
from .sift import KeyPoint, descriptor_matrix

log = logging.getLogger(__name__)

_RANK_TOL = 1e-8
_DET_TOL = 1e-12


@dataclass(frozen=True)
class MatchPair:
    """One correspondence; ``ratio`` is closest / second-closest descriptor distance."""

    x: float
    y: float
    xp: float
    yp: float
    distance: float = 0.0
    ratio: float = 0.0

    @property
    def src(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def dst(self) -> tuple[float, float]:
        return (self.xp, self.yp)


@dataclass(frozen=True, eq=False)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise InvalidParameter("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) < 1e-15:
            raise DegenerateConfiguration("h33 is zero; cannot normalize the homography")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _DET_TOL:
            raise DegenerateConfiguration("homography is singular")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def apply(self, pts) -> np.ndarray:
        """Map an (N, 2) array of points; points sent to infinity become inf."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        hom = pts @ self.matrix[:, :2].T + self.matrix[:, 2]
        w = hom[:, 2:3]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = hom[:, :2] / w
        out[np.abs(w[:, 0]) < 1e-15] = np.inf
        return out

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def to_json(self) -> dict:
        return {"h": self.matrix.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Homography":
        return cls(np.asarray(d["h"], dtype=np.float64))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "Homography":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidParameter(f"{path}: malformed homography file ({exc})") from exc


@dataclass(frozen=True)
class RansacConfig:
    epsilon: float = 5.0
    iterations: int = 2000
    min_inliers: int = 10
    early_exit: bool = False
    confidence: float = 0.999
    refit_rounds: int = 5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidParameter("epsilon must be positive")
        if self.iterations < 1:
            raise InvalidParameter("iterations must be >= 1")


def corner_error(h_est: Homography, h_true: Homography, width: int, height: int) -> float:
    """Largest distance between the images of the four raster corners under both maps."""
    corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=float)
    return float(np.max(np.linalg.norm(h_est.apply(corners) - h_true.apply(corners), axis=1)))


# --------------------------------------------------------------------------
# Matching
# --------------------------------------------------------------------------

def match_descriptors(src_kps: Sequence[KeyPoint], dst_kps: Sequence[KeyPoint],
                      delta: float = 0.55, chunk: int = 1024) -> list[MatchPair]:
    """Nearest-neighbour matches that pass the ratio test, made one-to-one.

    For each source key point the closest and second-closest destination
    descriptors are found; the match is kept iff ``d1 / d2 < delta``.  When
    several sources pick the same destination only the smallest distance
    survives.
    """
    if not 0 < delta < 1:
        raise InvalidParameter(f"delta must lie in (0, 1), got {delta}")
    if len(dst_kps) < 2:
        raise InvalidParameter("ratio test needs at least two destination key points")
    if len(src_kps) == 0:
        raise InvalidParameter("no source key points")
    a = descriptor_matrix(list(src_kps))
    b = descriptor_matrix(list(dst_kps))
    b_sq = np.einsum("ij,ij->i", b, b)
    best = np.empty(len(a), dtype=np.int64)
    d1 = np.empty(len(a))
    d2 = np.empty(len(a))
    for start in range(0, len(a), chunk):
        blk = a[start:start + chunk]
        d_sq = b_sq[None, :] - 2.0 * blk @ b.T + np.einsum("ij,ij->i", blk, blk)[:, None]
        two = np.argpartition(d_sq, 1, axis=1)[:, :2]
        # recompute the two candidates exactly so identical descriptors give 0
        exact = np.linalg.norm(blk[:, None, :] - b[two], axis=2)
        order = np.argsort(exact, axis=1, kind="stable")
        two = np.take_along_axis(two, order, axis=1)
        exact = np.take_along_axis(exact, order, axis=1)
        best[start:start + len(blk)] = two[:, 0]
        d1[start:start + len(blk)] = exact[:, 0]
        d2[start:start + len(blk)] = exact[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d2 > 0, d1 / d2, 1.0)
    keep = np.nonzero(ratio < delta)[0]
    keep = keep[np.argsort(d1[keep], kind="stable")]
    taken: set[int] = set()
    pairs = []
    for i in keep:
        j = int(best[i])
        if j in taken:
            continue
        taken.add(j)
        s, d = src_kps[i], dst_kps[j]
        pairs.append((i, MatchPair(s.x, s.y, d.x, d.y, float(d1[i]), float(ratio[i]))))
    pairs.sort(key=lambda t: t[0])
    return [p for _, p in pairs]


def matches_to_arrays(matches) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(matches, np.ndarray):
        arr = np.asarray(matches, dtype=np.float64)
        return arr[:, 0:2].copy(), arr[:, 2:4].copy()
    src = np.array([[m.x, m.y] for m in matches], dtype=np.float64).reshape(-1, 2)
    dst = np.array([[m.xp, m.yp] for m in matches], dtype=np.float64).reshape(-1, 2)
    return src, dst


def save_matches_csv(matches: Sequence[MatchPair], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "xp", "yp", "distance", "ratio"])
        for m in matches:
            w.writerow([repr(float(v)) for v in (m.x, m.y, m.xp, m.yp, m.distance, m.ratio)])


def load_matches_csv(path) -> list[MatchPair]:
    with open(path, newline="") as fh:
        return [MatchPair(*(float(r[k]) for k in ("x", "y", "xp", "yp", "distance", "ratio")))
                for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# DLT
# --------------------------------------------------------------------------

def hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the RMS distance to sqrt(2)."""
    c = pts.mean(axis=0)
    rms = math.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1)))
    s = math.sqrt(2.0) / rms if rms > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _design_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Two independent rows per correspondence of the cross-product constraint."""
    n = src.shape[:-1]
    xh = np.concatenate([src, np.ones(n + (1,))], axis=-1)
    z = np.zeros_like(xh)
    xp = dst[..., 0:1]
    yp = dst[..., 1:2]
    r1 = np.concatenate([z, -xh, yp * xh], axis=-1)
    r2 = np.concatenate([xh, z, -xp * xh], axis=-1)
    rows = np.stack([r1, r2], axis=-2)
    return rows.reshape(n[:-1] + (2 * n[-1], 9))


def _normalized_dlt(src_n: np.ndarray, dst_n: np.ndarray):
    """Batched null-space solve. Returns (H_normalized (..., 3, 3), well_posed (...))."""
    A = _design_rows(src_n, dst_n)
    if A.shape[-2] < 9:
        A = np.concatenate([A, np.zeros(A.shape[:-2] + (9 - A.shape[-2], 9))], axis=-2)
    _, s, vt = np.linalg.svd(A)
    h = vt[..., -1, :].reshape(A.shape[:-2] + (3, 3))
    ok = s[..., 7] > _RANK_TOL * s[..., 0]
    return h, ok


def dlt_homography(matches) -> Homography:
    """Least-squares DLT on Hartley-normalized coordinates, rescaled to h33 = 1."""
    src, dst = matches_to_arrays(matches)
    if len(src) < 4:
        raise InvalidParameter(f"need at least 4 matches, got {len(src)}")
    ts = hartley_normalization(src)
    td = hartley_normalization(dst)
    src_n = src @ ts[:2, :2].T + ts[:2, 2]
    dst_n = dst @ td[:2, :2].T + td[:2, 2]
    hn, ok = _normalized_dlt(src_n, dst_n)
    if not ok:
        raise DegenerateConfiguration("correspondences do not determine a homography")
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-12 * np.abs(h).max():
        raise DegenerateConfiguration("recovered homography has h33 = 0")
    try:
        return Homography(h)
    except DegenerateConfiguration:
        raise
    except InvalidParameter as exc:
        raise DegenerateConfiguration(str(exc)) from exc


# --------------------------------------------------------------------------
# RANSAC
# --------------------------------------------------------------------------

def _transfer_error(hs: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """||dst - H src|| for a stack of homographies (B, 3, 3); inf behind the camera."""
    proj = hs[:, :, :2] @ src.T + hs[:, :, 2:3]
    w = proj[:, 2, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = proj[:, 0, :] / w
        py = proj[:, 1, :] / w
        err = np.hypot(px - dst[:, 0], py - dst[:, 1])
    err[~(w > 1e-12)] = np.inf
    err[~np.isfinite(err)] = np.inf
    return err


def _draw_samples(rng: np.random.Generator, n: int, iterations: int) -> np.ndarray:
    idx = rng.integers(0, n, size=(iterations, 4))
    while True:
        s = np.sort(idx, axis=1)
        bad = np.any(s[:, 1:] == s[:, :-1], axis=1)
        if not bad.any():
            return idx
        idx[bad] = rng.integers(0, n, size=(int(bad.sum()), 4))


def _collinear_any(pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """True where any 3 of the 4 points in a sample (B, 4, 2) are collinear."""
    out = np.zeros(pts.shape[0], dtype=bool)
    for a, b, c in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        u = pts[:, b] - pts[:, a]
        v = pts[:, c] - pts[:, a]
        area = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        scale = np.maximum(np.sum(u * u, axis=1), np.sum(v * v, axis=1))
        out |= area <= tol * np.maximum(scale, 1e-300)
    return out


def ransac_homography(matches, cfg: RansacConfig = RansacConfig(), rng_seed: int = 0,
                      batch: int = 250) -> tuple[Homography, list]:
    """Largest-consensus homography over random 4-point DLT hypotheses.

    The winning model is refit on its consensus set; the returned inliers are
    exactly the matches within ``cfg.epsilon`` of the returned homography.
    Sample ``i`` is the ``i``-th row drawn from ``default_rng(rng_seed)``, so
    the result does not depend on how hypotheses are batched.
    """
    src, dst = matches_to_arrays(matches)
    n = len(src)
    if n < 4:
        raise InvalidParameter(f"need at least 4 matches, got {n}")
    rng = np.random.default_rng(rng_seed)
    samples = _draw_samples(rng, n, cfg.iterations)

    ts = hartley_normalization(src)
    td = hartley_normalization(dst)
    src_n = src @ ts[:2, :2].T + ts[:2, 2]
    dst_n = dst @ td[:2, :2].T + td[:2, 2]
    td_inv = np.linalg.inv(td)

    best_count = 0
    best_mask = None
    done = 0
    needed = cfg.iterations
    while done < min(cfg.iterations, needed):
        idx = samples[done:done + batch]
        done += len(idx)
        ok = ~_collinear_any(src_n[idx]) & ~_collinear_any(dst_n[idx])
        hn, well = _normalized_dlt(src_n[idx], dst_n[idx])
        ok &= well
        hs = td_inv @ hn @ ts
        h33 = hs[:, 2, 2]
        ok &= np.abs(h33) > 1e-12 * np.abs(hs).reshape(len(hs), -1).max(axis=1)
        hs = hs / np.where(ok, h33, 1.0)[:, None, None]
        ok &= np.abs(np.linalg.det(hs)) > _DET_TOL
        err = _transfer_error(hs, src, dst)
        inl = err <= cfg.epsilon
        counts = np.where(ok, inl.sum(axis=1), 0)
        for b in range(len(idx)):
            c = int(counts[b])
            if c >= cfg.min_inliers and c > best_count:
                best_count = c
                best_mask = inl[b].copy()
        if cfg.early_exit and best_count > 0:
            w = best_count / n
            denom = math.log(max(1e-300, 1.0 - w ** 4))
            if denom < 0:
                needed = int(math.ceil(math.log(1.0 - cfg.confidence) / denom))
    if best_mask is None:
        raise EstimationFailed(
            f"no hypothesis reached {cfg.min_inliers} inliers among {n} matches")

    mask = best_mask
    h = None
    for _ in range(max(1, cfg.refit_rounds)):
        try:
            h_new = dlt_homography(np.column_stack([src[mask], dst[mask]]))
        except DegenerateConfiguration as exc:
            if h is None:
                raise EstimationFailed(f"consensus set is degenerate: {exc}") from exc
            break
        new_mask = _transfer_error(h_new.matrix[None], src, dst)[0] <= cfg.epsilon
        if new_mask.sum() < cfg.min_inliers:
            if h is None:
                raise EstimationFailed("refit homography lost its consensus")
            break
        h = h_new
        stable = np.array_equal(new_mask, mask)
        mask = new_mask
        if stable:
            break
    final = _transfer_error(h.matrix[None], src, dst)[0] <= cfg.epsilon
    if isinstance(matches, np.ndarray):
        inliers = [MatchPair(*map(float, row[:4])) for row in np.asarray(matches)[final]]
    else:
        inliers = [m for m, keep in zip(matches, final) if keep]
    log.debug("ransac: %d/%d inliers", len(inliers), n)
    return h, inliers


def mean_homography(hs: Sequence[Homography]) -> Homography:
    """Entry-wise arithmetic mean."""
    if len(hs) == 0:
        raise InvalidParameter("cannot average an empty list of homographies")
    stack = np.array([h.matrix for h in hs])
    # averaging deviations from the first estimate keeps identical inputs exact
    return Homography(stack[0] + np.mean(stack - stack[0], axis=0))
