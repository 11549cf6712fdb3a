"""Correlation grids, ROI masks and displacement field I/O."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import InvalidParameter

# Per-point status codes beyond the solver codes (0..5).
LOW_ZNCC = 6
UNREACHABLE = 7
OUTSIDE_ROI = -1

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class RoiMask:
    """Boolean raster over the correlation grid.

    Grid node (i, j) sits at pixel (origin[0] + j * spacing, origin[1] + i * spacing).
    ``seed`` is the (row, col) index of the seed node.
    """

    mask: np.ndarray
    seed: tuple[int, int]
    origin: tuple[int, int] = (0, 0)
    spacing: int = 1

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise InvalidParameter("ROI mask must be 2-D")
        if self.spacing < 1:
            raise InvalidParameter("spacing must be >= 1")
        r, c = self.seed
        if not (0 <= r < m.shape[0] and 0 <= c < m.shape[1]) or not m[r, c]:
            raise InvalidParameter("seed must lie inside the ROI")
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "seed", (int(r), int(c)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def node_xy(self, i: int, j: int) -> tuple[int, int]:
        return self.origin[0] + j * self.spacing, self.origin[1] + i * self.spacing

    def grid_xy(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.shape
        xs = self.origin[0] + self.spacing * np.arange(nx)
        ys = self.origin[1] + self.spacing * np.arange(ny)
        return np.meshgrid(xs, ys)

    def reachable(self) -> np.ndarray:
        """Nodes 4-connected to the seed."""
        labels, _ = ndimage.label(self.mask, structure=_FOUR)
        return labels == labels[self.seed]

    def unreachable(self) -> np.ndarray:
        return self.mask & ~self.reachable()

    @classmethod
    def from_pixel_mask(cls, pixels, spacing: int, seed_xy, margin: int = 0) -> "RoiMask":
        """Sample a pixel mask on a regular grid.

        Nodes sit on multiples of ``spacing``; those closer than ``margin`` to
        the image border are dropped.  The seed node is the grid node nearest
        to ``seed_xy``.
        """
        pm = np.asarray(pixels, dtype=bool)
        h, w = pm.shape
        if spacing < 1:
            raise InvalidParameter("spacing must be >= 1")
        start = -(-margin // spacing) * spacing
        xs = np.arange(start, w - margin, spacing)
        ys = np.arange(start, h - margin, spacing)
        if xs.size == 0 or ys.size == 0:
            raise InvalidParameter("no grid node fits inside the image")
        mask = pm[np.ix_(ys, xs)]
        if not mask.any():
            raise InvalidParameter("ROI contains no grid node")
        rr, cc = np.nonzero(mask)
        d2 = (xs[cc] - seed_xy[0]) ** 2 + (ys[rr] - seed_xy[1]) ** 2
        k = int(np.argmin(d2))
        return cls(mask, (int(rr[k]), int(cc[k])), (int(xs[0]), int(ys[0])), int(spacing))

    @classmethod
    def disk(cls, shape, center, radius: float, spacing: int, margin: int = 0) -> "RoiMask":
        """Circular ROI with the seed at the node nearest the centre."""
        h, w = shape
        yy, xx = np.mgrid[0:h, 0:w]
        pm = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius * radius
        return cls.from_pixel_mask(pm, spacing, center, margin)


@dataclass
class DisplacementField:
    """Per-node displacement, correlation quality and validity on a regular grid."""

    origin: tuple[int, int]
    spacing: int
    u: np.ndarray
    v: np.ndarray
    zncc: np.ndarray
    valid: np.ndarray
    status: np.ndarray
    roi: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def grid_xy(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.shape
        xs = self.origin[0] + self.spacing * np.arange(nx)
        ys = self.origin[1] + self.spacing * np.arange(ny)
        return np.meshgrid(xs, ys)

    @classmethod
    def empty(cls, roi: RoiMask, meta: dict | None = None) -> "DisplacementField":
        shp = roi.shape
        nan = np.full(shp, np.nan)
        st = np.where(roi.mask, UNREACHABLE, OUTSIDE_ROI).astype(np.int64)
        return cls(roi.origin, roi.spacing, nan.copy(), nan.copy(), nan.copy(),
                   np.zeros(shp, dtype=bool), st, roi.mask.copy(), dict(meta or {}))

    def records(self):
        """(x, y, u, v, zncc, valid) for every ROI node in row-major order."""
        X, Y = self.grid_xy()
        for i, j in zip(*np.nonzero(self.roi)):
            yield (int(X[i, j]), int(Y[i, j]), float(self.u[i, j]), float(self.v[i, j]),
                   float(self.zncc[i, j]), bool(self.valid[i, j]))

    def to_csv(self, path) -> None:
        """Write ``x,y,u,v,zncc,valid`` rows plus a ``.json`` sidecar with grid metadata."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["x", "y", "u", "v", "zncc", "valid"])
            for x, y, u, v, z, ok in self.records():
                wr.writerow([x, y, repr(u), repr(v), repr(z), int(ok)])
        side = {"origin": list(self.origin), "spacing": self.spacing,
                "shape": list(self.shape), "meta": self.meta}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "DisplacementField":
        """Read a field; without a sidecar the grid is inferred from the node coordinates."""
        path = Path(path)
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if rows.shape[0] == 0:
            raise InvalidParameter(f"{path}: no rows")
        x = rows[:, 0].astype(np.int64)
        y = rows[:, 1].astype(np.int64)
        side = path.with_suffix(".json")
        meta = {}
        if side.exists():
            info = json.loads(side.read_text())
            origin = tuple(info["origin"])
            spacing = int(info["spacing"])
            shape = tuple(info["shape"])
            meta = info.get("meta", {})
        else:
            ux, uy = np.unique(x), np.unique(y)
            steps = np.concatenate([np.diff(ux), np.diff(uy)])
            spacing = int(np.gcd.reduce(steps)) if steps.size else 1
            origin = (int(ux[0]), int(uy[0]))
            shape = ((int(uy[-1]) - origin[1]) // spacing + 1,
                     (int(ux[-1]) - origin[0]) // spacing + 1)
        cols = (x - origin[0]) // spacing
        rws = (y - origin[1]) // spacing
        f = cls(origin, spacing, np.full(shape, np.nan), np.full(shape, np.nan),
                np.full(shape, np.nan), np.zeros(shape, dtype=bool),
                np.full(shape, OUTSIDE_ROI, dtype=np.int64), np.zeros(shape, dtype=bool), meta)
        f.u[rws, cols] = rows[:, 2]
        f.v[rws, cols] = rows[:, 3]
        f.zncc[rws, cols] = rows[:, 4]
        f.valid[rws, cols] = rows[:, 5] != 0
        f.roi[rws, cols] = True
        f.status[rws, cols] = np.where(f.valid[rws, cols], 0, LOW_ZNCC)
        return f
