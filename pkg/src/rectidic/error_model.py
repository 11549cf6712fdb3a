"""Closed-form pinhole predictions of displacement error under a rotated principal axis.

All lengths are in caller-consistent units (mm or pixels); angles are radians.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import GeometryViolation, InvalidParameter


@dataclass(frozen=True)
class CameraGeometry:
    f: float
    S: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.f > 0 and self.S > 0):
            raise InvalidParameter("f and S must be positive")
        if not abs(self.theta) < math.pi / 2:
            raise InvalidParameter("|theta| must be below 90 degrees")


@dataclass(frozen=True)
class ObjectMotion:
    xA: float
    yA: float
    dx: float
    dy: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.xA, self.yA, self.dx, self.dy)):
            raise InvalidParameter("motion must be finite")


def _depth(g: CameraGeometry, x: float) -> float:
    d = g.S - x * math.sin(g.theta)
    if not d > 0:
        raise GeometryViolation(f"object point x={x} lies behind the camera (S - x sin(theta) = {d})")
    return d


def projected_dx_perp(g: CameraGeometry, m: ObjectMotion) -> float:
    return g.f * m.dx / g.S


def projected_dy_perp(g: CameraGeometry, m: ObjectMotion) -> float:
    return g.f * m.dy / g.S


def projected_dx_nonperp(g: CameraGeometry, m: ObjectMotion) -> float:
    """Image-plane x displacement seen by the rotated camera (similar triangles)."""
    c = math.cos(g.theta)
    xb = m.xA + m.dx
    return g.f * (xb * c / _depth(g, xb) - m.xA * c / _depth(g, m.xA))


def projected_dy_nonperp(g: CameraGeometry, m: ObjectMotion) -> float:
    xb = m.xA + m.dx
    return g.f * ((m.yA + m.dy) / _depth(g, xb) - m.yA / _depth(g, m.xA))


def error_dx(g: CameraGeometry, m: ObjectMotion) -> float:
    """f |dx/S - (xA+dx)cos/(S-(xA+dx)sin) + xA cos/(S-xA sin)|.

    The two fractions are combined over a common denominator first, which
    removes the cancellation and makes theta = 0 return exactly zero.
    """
    da, db = _depth(g, m.xA), _depth(g, m.xA + m.dx)
    return g.f * abs(m.dx) * abs(da * db - math.cos(g.theta) * g.S * g.S) / (g.S * da * db)


def error_dy(g: CameraGeometry, m: ObjectMotion) -> float:
    """f |dy/S - (yA+dy)/(S-(xA+dx)sin) + yA/(S-xA sin)|, combined like :func:`error_dx`."""
    xb = m.xA + m.dx
    da, db = _depth(g, m.xA), _depth(g, xb)
    s = math.sin(g.theta)
    return g.f * abs(s) * abs(m.dy * da * xb + g.S * m.yA * m.dx) / (g.S * da * db)


TARGETS = {"error_dx": error_dx, "error_dy": error_dy}
PARAMETERS = ("f", "S", "theta", "xA", "yA", "dx", "dy")
DEFAULTS = {"f": 50.0, "S": 1000.0, "theta": math.radians(10.0),
            "xA": 0.0, "yA": 50.0, "dx": 1.0, "dy": 1.0}


def parse_axis(text: str) -> tuple[str, np.ndarray]:
    """``name=start:stop:step`` (stop inclusive) or ``name=v1,v2,...``.

    ``theta`` values are read in degrees and returned in radians.
    """
    if "=" not in text:
        raise InvalidParameter(f"axis must look like name=start:stop:step, got {text!r}")
    name, rng = text.split("=", 1)
    name = name.strip()
    if name not in PARAMETERS:
        raise InvalidParameter(f"unknown sweep parameter {name!r}")
    try:
        if ":" in rng:
            start, stop, step = (float(t) for t in rng.split(":"))
            if step <= 0:
                raise InvalidParameter("step must be positive")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            vals = start + step * np.arange(max(n, 0))
        else:
            vals = np.array([float(t) for t in rng.split(",")])
    except ValueError as exc:
        raise InvalidParameter(f"bad axis values in {text!r}") from exc
    if vals.size == 0:
        raise InvalidParameter(f"axis {name} is empty")
    if name == "theta":
        vals = np.radians(vals)
    return name, vals


def sweep(axes: Mapping[str, Sequence[float]], fixed: Mapping[str, float] | None = None,
          target: str = "error_dx") -> list[dict]:
    """Evaluate ``target`` on the Cartesian grid of ``axes`` (last axis fastest).

    Unswept parameters come from ``fixed`` and then ``DEFAULTS``.  Each row
    carries every parameter, the error, and an ``ok`` flag; configurations
    violating the geometry keep their row with ``error = nan`` and ``ok = False``.
    """
    if target not in TARGETS:
        raise InvalidParameter(f"target must be one of {sorted(TARGETS)}")
    if not axes:
        raise InvalidParameter("at least one sweep axis is required")
    base = dict(DEFAULTS)
    for k, v in (fixed or {}).items():
        if k not in PARAMETERS:
            raise InvalidParameter(f"unknown parameter {k!r}")
        base[k] = float(v)
    names = list(axes)
    fn = TARGETS[target]
    rows = []
    for combo in itertools.product(*(list(axes[n]) for n in names)):
        vals = dict(base)
        vals.update({n: float(v) for n, v in zip(names, combo)})
        row = dict(vals)
        try:
            g = CameraGeometry(vals["f"], vals["S"], vals["theta"])
            m = ObjectMotion(vals["xA"], vals["yA"], vals["dx"], vals["dy"])
            row[target] = fn(g, m)
            row["ok"] = True
        except (GeometryViolation, InvalidParameter):
            row[target] = float("nan")
            row["ok"] = False
        rows.append(row)
    return rows


def write_sweep_csv(rows: Iterable[dict], fh, target: str) -> None:
    """CSV with theta in degrees, one row per configuration in sweep order."""
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["f", "S", "theta_deg", "xA", "yA", "dx", "dy", target, "ok"])
    for r in rows:
        wr.writerow([repr(r["f"]), repr(r["S"]), repr(math.degrees(r["theta"])), repr(r["xA"]),
                     repr(r["yA"]), repr(r["dx"]), repr(r["dy"]), repr(r[target]), int(r["ok"])])


def evaluate(g: CameraGeometry, m: ObjectMotion) -> dict:
    """All projections and both errors for one configuration."""
    out = {"geometry": asdict(g), "motion": asdict(m)}
    out.update(dx_perp=projected_dx_perp(g, m), dx_nonperp=projected_dx_nonperp(g, m),
               dy_perp=projected_dy_perp(g, m), dy_nonperp=projected_dy_nonperp(g, m),
               error_dx=error_dx(g, m), error_dy=error_dy(g, m))
    return out
