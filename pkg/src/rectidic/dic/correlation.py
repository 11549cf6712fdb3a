"""Correlation criteria and the first-order subset shape function."""

from __future__ import annotations

import enum
from dataclasses import astuple, dataclass

import numpy as np

from ..errors import DegenerateSubset, InvalidParameter


class Criterion(enum.Enum):
    CC = "cc"
    ZNCC = "zncc"
    SSD = "ssd"
    ZNSSD = "znssd"


@dataclass(frozen=True)
class WarpParams:
    """First-order warp: displacement (u, v) plus the four displacement gradients."""

    u: float = 0.0
    v: float = 0.0
    dudx: float = 0.0
    dudy: float = 0.0
    dvdx: float = 0.0
    dvdy: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(astuple(self))):
            raise InvalidParameter("warp parameters must be finite")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "WarpParams":
        return cls(*(float(x) for x in a))

    def shifted(self, dx: float, dy: float) -> "WarpParams":
        """The same affine field re-expressed at a point offset by (dx, dy)."""
        return WarpParams(self.u + self.dudx * dx + self.dudy * dy,
                          self.v + self.dvdx * dx + self.dvdy * dy,
                          self.dudx, self.dudy, self.dvdx, self.dvdy)


def _zero_normalized(a: np.ndarray) -> np.ndarray:
    c = a - a.mean()
    norm = np.sqrt(np.sum(c * c))
    if not norm > 0:
        raise DegenerateSubset("subset has zero intensity variance")
    return c / norm


def correlation(ref_subset, def_subset, criterion: Criterion) -> float:
    """Evaluate one of CC, ZNCC, SSD, ZNSSD between two equally shaped subsets."""
    f = np.asarray(ref_subset, dtype=np.float64).ravel()
    g = np.asarray(def_subset, dtype=np.float64).ravel()
    if f.shape != g.shape or f.size == 0:
        raise InvalidParameter("subsets must be non-empty and the same size")
    if criterion is Criterion.CC:
        return float(np.sum(f * g))
    if criterion is Criterion.SSD:
        return float(np.sum((f - g) ** 2))
    fn = _zero_normalized(f)
    gn = _zero_normalized(g)
    if criterion is Criterion.ZNCC:
        return float(np.sum(fn * gn))
    return float(np.sum((fn - gn) ** 2))


def warp_subset(p: WarpParams, center, offsets) -> np.ndarray:
    """Map local offsets (N, 2) around ``center`` through the first-order shape function."""
    off = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    dx, dy = off[:, 0], off[:, 1]
    x = center[0] + dx + p.u + p.dudx * dx + p.dudy * dy
    y = center[1] + dy + p.v + p.dvdx * dx + p.dvdy * dy
    return np.column_stack([x, y])


def subset_offsets(half_width: int) -> np.ndarray:
    """Row-major integer offsets of a (2M+1)^2 square subset."""
    r = np.arange(-half_width, half_width + 1, dtype=np.float64)
    yy, xx = np.meshgrid(r, r, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])
