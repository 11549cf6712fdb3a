"""Displacement accuracy metrics: MAE and SDAE of the absolute error per component."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .dic.field import DisplacementField
from .errors import InvalidParameter

Truth = Union[DisplacementField, Callable]


@dataclass(frozen=True)
class ErrorStats:
    mae_u: float
    mae_v: float
    sdae_u: float
    sdae_v: float
    count: int

    def as_dict(self) -> dict:
        return {"mae_u": self.mae_u, "mae_v": self.mae_v, "sdae_u": self.sdae_u,
                "sdae_v": self.sdae_v, "count": self.count}


def _grid_desc(f: DisplacementField) -> str:
    return f"origin={tuple(f.origin)} spacing={f.spacing} shape={f.shape}"


def _aligned(measured: DisplacementField, truth: DisplacementField):
    """Truth arrays resampled onto the measured grid.

    The grids must share the spacing and lie on the same lattice; nodes the
    truth does not cover come back invalid.
    """
    s = measured.spacing
    off = np.subtract(measured.origin, truth.origin)
    if truth.spacing != s or np.any(off % s):
        raise InvalidParameter(f"grid mismatch: measured {_grid_desc(measured)} "
                               f"vs truth {_grid_desc(truth)}")
    ny, nx = measured.shape
    cols = np.arange(nx) + off[0] // s
    rows = np.arange(ny) + off[1] // s
    inside = ((rows >= 0) & (rows < truth.shape[0]))[:, None] & ((cols >= 0) & (cols < truth.shape[1]))[None]
    r = np.clip(rows, 0, truth.shape[0] - 1)
    c = np.clip(cols, 0, truth.shape[1] - 1)
    pick = np.ix_(r, c)
    return truth.u[pick], truth.v[pick], inside & truth.valid[pick]


def abs_errors(measured: DisplacementField, truth: Truth) -> tuple[np.ndarray, np.ndarray]:
    """|u' - u| and |v' - v| at points valid in both fields.

    ``truth`` is either a field on the same lattice (equal spacing, origins
    differing by whole grid steps) or a callable ``(x, y) -> (u, v)``.
    """
    ok = measured.valid & np.isfinite(measured.u) & np.isfinite(measured.v)
    if isinstance(truth, DisplacementField):
        tu, tv, tvalid = _aligned(measured, truth)
        ok = ok & tvalid
    else:
        X, Y = measured.grid_xy()
        tu, tv = truth(X.astype(np.float64), Y.astype(np.float64))
        tu, tv = np.asarray(tu, dtype=np.float64), np.asarray(tv, dtype=np.float64)
    if not ok.any():
        raise InvalidParameter("no point is valid in both fields")
    return np.abs(measured.u[ok] - tu[ok]), np.abs(measured.v[ok] - tv[ok])


def mae(measured: DisplacementField, truth: Truth) -> tuple[float, float]:
    eu, ev = abs_errors(measured, truth)
    return float(eu.mean()), float(ev.mean())


def sdae(measured: DisplacementField, truth: Truth) -> tuple[float, float]:
    """Population standard deviation of the absolute error about its mean."""
    eu, ev = abs_errors(measured, truth)
    return float(eu.std()), float(ev.std())


def error_stats(measured: DisplacementField, truth: Truth) -> ErrorStats:
    eu, ev = abs_errors(measured, truth)
    return ErrorStats(float(eu.mean()), float(ev.mean()), float(eu.std()), float(ev.std()),
                      int(eu.size))
