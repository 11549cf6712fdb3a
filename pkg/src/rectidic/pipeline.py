"""Calibrate, rectify and correlate: the end-to-end measurement workflow."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import __version__
from .dic import DisplacementField, RoiMask, SubsetParams, refine_seed, rg_dic
from .errors import EstimationFailed, InvalidParameter, RectiDICError
from .homography import (Homography, RansacConfig, mean_homography, match_descriptors,
                         ransac_homography, save_matches_csv)
from .image import GrayImage, InterpolationKind, load_image
from .metrics import Truth, error_stats
from .rectify import rectify_image
from .sift import extract

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Everything a calibrate/run invocation needs.

    ``roi`` is a mask image (nonzero = inside) in the rectified frame; when it
    is omitted the ROI is every node whose subset lies on valid rectified
    pixels.  ``seed_point`` defaults to the ROI node nearest the ROI centroid.
    """

    reference: Path
    calibration: list[Path] = field(default_factory=list)
    deformed: list[Path] = field(default_factory=list)
    out_dir: Path = Path("out")
    homography: Path | None = None
    ratio_delta: float = 0.55
    ransac: RansacConfig = field(default_factory=RansacConfig)
    subset: SubsetParams = field(default_factory=SubsetParams)
    seed: int = 0
    rectify: bool = True
    rectify_interp: InterpolationKind = InterpolationKind.BILINEAR
    roi: Path | RoiMask | None = None
    seed_point: tuple[int, int] | None = None
    search_radius: int = 80
    threads: int | None = None

    def __post_init__(self):
        self.reference = Path(self.reference)
        self.calibration = [Path(p) for p in self.calibration]
        self.deformed = [Path(p) for p in self.deformed]
        self.out_dir = Path(self.out_dir)
        if self.homography is not None:
            self.homography = Path(self.homography)
        if not 0 < self.ratio_delta < 1:
            raise InvalidParameter("ratio_delta must lie in (0, 1)")
        if self.search_radius < 0:
            raise InvalidParameter("search_radius must be >= 0")

    def homography_path(self) -> Path:
        return self.homography if self.homography is not None else self.out_dir / "h.json"


@dataclass(frozen=True)
class CalibrationReport:
    homography: Homography
    per_image: list[dict]
    path: Path


def _thread_count(cfg_threads: int | None, jobs: int) -> int:
    env = os.environ.get("RECTIDIC_THREADS")
    n = cfg_threads or (int(env) if env else (os.cpu_count() or 1))
    if env:
        n = min(n, int(env))
    return max(1, min(n, jobs))


def calibrate(calibration: Sequence[GrayImage], reference: GrayImage, delta: float = 0.55,
              ransac: RansacConfig = RansacConfig(), seed: int = 0, names: Sequence[str] | None = None,
              matches_dir: Path | None = None):
    """Mean homography mapping calibration-frame pixels to reference pixels.

    Rectifying the reference with the result resamples it into the
    calibration frame.  Raises EstimationFailed naming the first image whose
    estimate fails.
    """
    if not calibration:
        raise InvalidParameter("at least one calibration image is required")
    names = list(names) if names is not None else [f"calibration[{i}]" for i in range(len(calibration))]
    ref_kps = extract(reference)
    if not ref_kps:
        raise EstimationFailed("reference image yields no keypoints")
    hs, stats = [], []
    for name, cal in zip(names, calibration):
        try:
            kps = extract(cal)
            if not kps:
                raise EstimationFailed("no keypoints")
            matches = match_descriptors(kps, ref_kps, delta)
            if len(matches) < max(4, ransac.min_inliers):
                raise EstimationFailed(f"only {len(matches)} matches")
            h, inliers = ransac_homography(matches, ransac, rng_seed=seed)
        except (EstimationFailed, InvalidParameter) as exc:
            raise EstimationFailed(f"calibration image {name}: {exc}") from exc
        src = np.array([[m.x, m.y] for m in inliers])
        dst = np.array([[m.xp, m.yp] for m in inliers])
        resid = np.hypot(*(h.apply(src) - dst).T)
        st = {"image": name, "keypoints": len(kps), "matches": len(matches),
              "inliers": len(inliers), "mean_reprojection": float(resid.mean()),
              "max_reprojection": float(resid.max())}
        log.info("calibrate %s: %d keypoints, %d matches, %d inliers, mean reprojection %.3f px",
                 name, st["keypoints"], st["matches"], st["inliers"], st["mean_reprojection"])
        if matches_dir is not None:
            Path(matches_dir).mkdir(parents=True, exist_ok=True)
            save_matches_csv(matches, Path(matches_dir) / f"{Path(name).stem}_matches.csv")
        hs.append(h)
        stats.append(st)
    return mean_homography(hs), stats


def cmd_calibrate(cfg: PipelineConfig) -> CalibrationReport:
    """Estimate the mean rectifying homography and write it as JSON."""
    if not cfg.calibration:
        raise InvalidParameter("at least one calibration image is required")
    ref = load_image(cfg.reference)
    cals = [load_image(p) for p in cfg.calibration]
    h, stats = calibrate(cals, ref, cfg.ratio_delta, cfg.ransac, cfg.seed,
                         [str(p) for p in cfg.calibration])
    path = cfg.homography_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    h.save(path)
    return CalibrationReport(h, stats, path)


def valid_region(shape, h: Homography | None, margin: int) -> np.ndarray:
    """Pixels whose rectified value comes from inside the source image, eroded by ``margin``."""
    hh, ww = shape
    if h is None:
        mask = np.ones(shape, dtype=bool)
    else:
        ys, xs = np.mgrid[0:hh, 0:ww].astype(np.float64)
        m = h.matrix
        den = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / den
            sy = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / den
        mask = (den > 0) & (sx >= 0) & (sx <= ww - 1) & (sy >= 0) & (sy <= hh - 1)
    if margin > 0:
        mask = ndimage.binary_erosion(mask, iterations=margin, border_value=0)
    return mask


def build_roi(cfg: PipelineConfig, shape, h: Homography | None) -> RoiMask:
    if isinstance(cfg.roi, RoiMask):
        return cfg.roi
    margin = cfg.subset.half_width + 2
    if cfg.roi is not None:
        pm = load_image(cfg.roi).pixels > 0
        if pm.shape != tuple(shape):
            raise InvalidParameter(f"ROI mask {pm.shape} does not match image {tuple(shape)}")
    else:
        pm = valid_region(shape, h, margin)
    if not pm.any():
        raise InvalidParameter("ROI is empty")
    seed = cfg.seed_point
    if seed is None:
        ys, xs = np.nonzero(pm)
        k = int(np.argmin((xs - xs.mean()) ** 2 + (ys - ys.mean()) ** 2))
        seed = (int(xs[k]), int(ys[k]))
    roi = RoiMask.from_pixel_mask(pm, cfg.subset.spacing, seed, margin)
    return roi


def correlate_frame(ref: GrayImage, deformed: GrayImage, roi: RoiMask, params: SubsetParams,
                    search_radius: int) -> DisplacementField:
    """Seed search at the ROI seed node followed by reliability-guided propagation."""
    seed_xy = roi.node_xy(*roi.seed)
    s = refine_seed(ref, deformed, seed_xy, search_radius, params)
    return rg_dic(ref, deformed, roi, params, s.p)


def _load_rectified(path: Path, h: Homography | None, interp: InterpolationKind) -> GrayImage:
    img = load_image(path)
    return img if h is None else rectify_image(img, h, kind=interp)


def cmd_run(cfg: PipelineConfig) -> dict:
    """Rectify, correlate every deformed frame and write CSVs plus ``manifest.json``.

    Per-frame failures are recorded in the manifest; the caller decides the
    exit status from ``manifest["failed"]``.
    """
    if not cfg.deformed:
        raise InvalidParameter("no deformed images given")
    h = Homography.load(cfg.homography_path()) if cfg.rectify else None
    ref = _load_rectified(cfg.reference, h, cfg.rectify_interp)
    roi = build_roi(cfg, ref.shape, h)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    stems = [p.stem for p in cfg.deformed]
    if len(set(stems)) != len(stems):
        raise InvalidParameter("deformed image names must have distinct stems")

    def job(path: Path) -> dict:
        out = cfg.out_dir / f"{path.stem}.csv"
        entry = {"input": str(path), "output": str(out)}
        try:
            d = _load_rectified(path, h, cfg.rectify_interp)
            fld = correlate_frame(ref, d, roi, cfg.subset, cfg.search_radius)
            fld.meta.update(reference=str(cfg.reference), deformed=str(path),
                            rectified=h is not None, version=__version__)
            fld.to_csv(out)
            entry.update(status="ok", valid=int(fld.valid.sum()), roi_points=int(roi.mask.sum()))
            log.info("%s: %d/%d valid points", path.name, entry["valid"], entry["roi_points"])
        except RectiDICError as exc:
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            log.error("%s failed: %s", path.name, exc)
        return entry

    n = _thread_count(cfg.threads, len(cfg.deformed))
    if n == 1:
        entries = [job(p) for p in cfg.deformed]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            entries = list(pool.map(job, cfg.deformed))
    manifest = {
        "version": __version__,
        "reference": str(cfg.reference),
        "homography": str(cfg.homography_path()) if h is not None else None,
        "homography_matrix": h.matrix.tolist() if h is not None else None,
        "rectified": h is not None,
        "params": {"subset": _subset_dict(cfg.subset), "search_radius": cfg.search_radius,
                   "seed": cfg.seed, "roi_points": int(roi.mask.sum()),
                   "roi_seed": list(roi.node_xy(*roi.seed))},
        "frames": entries,
        "failed": sum(e["status"] != "ok" for e in entries),
    }
    (cfg.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _subset_dict(p: SubsetParams) -> dict:
    d = asdict(p)
    d["criterion"] = p.criterion.name.lower()
    d["interpolation"] = p.interpolation.name.lower()
    return d


REPORT_COLUMNS = ("frame", "mae_u", "mae_v", "sdae_u", "sdae_v", "count")


def cmd_report(measured: Sequence[Path], truths: Sequence[Truth]) -> list[dict]:
    """Per-frame MAE/SDAE rows; ``truths`` pairs one truth with each measured CSV."""
    if len(measured) != len(truths):
        raise InvalidParameter(f"{len(measured)} measured fields but {len(truths)} truths")
    rows = []
    for path, truth in zip(measured, truths):
        st = error_stats(DisplacementField.from_csv(path), truth)
        rows.append({"frame": Path(path).stem, **st.as_dict()})
    return rows
