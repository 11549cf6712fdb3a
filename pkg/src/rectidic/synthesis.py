"""Synthetic speckle images, rotation displacement fields and simulated camera rotations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryViolation, InvalidParameter
from .homography import Homography
from .image import GrayImage, InterpolationKind, sample_many
from .rectify import rectify_image


@dataclass(frozen=True)
class RotationFieldParams:
    """Rigid rotation by ``theta`` (radians) about ``(x0, 0)``."""

    x0: float
    theta: float


@dataclass(frozen=True)
class EulerAngles:
    """Rotations about the z (alpha), y (beta) and x (gamma) axes, radians."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    @classmethod
    def degrees(cls, alpha: float = 0.0, beta: float = 0.0, gamma: float = 0.0) -> "EulerAngles":
        return cls(math.radians(alpha), math.radians(beta), math.radians(gamma))


@dataclass(frozen=True)
class VirtualCamera:
    focal_px: float
    cx: float
    cy: float

    def __post_init__(self):
        if not self.focal_px > 0:
            raise InvalidParameter("focal_px must be positive")

    @classmethod
    def for_image(cls, width: int, height: int) -> "VirtualCamera":
        """Default intrinsics: focal length = image width, principal point at the centre."""
        return cls(float(width), (width - 1) / 2.0, (height - 1) / 2.0)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.focal_px, 0.0, self.cx], [0.0, self.focal_px, self.cy], [0.0, 0.0, 1.0]])


def speckle_image(width: int, height: int, seed: int = 0, density: float = 0.05,
                  radius: tuple[float, float] = (2.0, 4.0), background: float = 0.5) -> GrayImage:
    """Random Gaussian blobs of both polarities on a uniform background.

    ``density`` is blobs per pixel; each blob is ``a * exp(-r^2 / R^2)`` with
    ``R`` uniform in ``radius``.  The result is rescaled into [0.02, 0.98].
    """
    if width < 1 or height < 1 or density <= 0:
        raise InvalidParameter("bad speckle parameters")
    rng = np.random.default_rng(seed)
    n = int(round(density * width * height))
    xs = rng.uniform(-radius[1], width - 1 + radius[1], n)
    ys = rng.uniform(-radius[1], height - 1 + radius[1], n)
    rs = rng.uniform(radius[0], radius[1], n)
    amps = rng.choice([-1.0, 1.0], n) * rng.uniform(0.5, 1.0, n)
    img = np.full((height, width), background)
    for x, y, r, a in zip(xs, ys, rs, amps):
        ext = int(math.ceil(3 * r))
        x0, x1 = max(int(x) - ext, 0), min(int(x) + ext + 1, width)
        y0, y1 = max(int(y) - ext, 0), min(int(y) + ext + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        gx = np.exp(-((np.arange(x0, x1) - x) ** 2) / (r * r))
        gy = np.exp(-((np.arange(y0, y1) - y) ** 2) / (r * r))
        img[y0:y1, x0:x1] += a * np.outer(gy, gx)
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = 0.02 + 0.96 * (img - lo) / (hi - lo)
    return GrayImage(img)


def add_noise(img: GrayImage, std: float, seed: int = 0) -> GrayImage:
    rng = np.random.default_rng(seed)
    return GrayImage(np.clip(img.pixels + rng.normal(0.0, std, img.shape), 0.0, 1.0))


def rotation_displacement(x, y, p: RotationFieldParams):
    """Displacement (u, v) of points (x, y) under the rotation field.

    The polar angle is taken with ``atan2(x - x0, y)`` so the field is the
    rigid rotation everywhere, including the line ``y = 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = np.hypot(x - p.x0, y)
    phi = np.arctan2(x - p.x0, y)
    u = np.sin(p.theta + phi) * r + p.x0 - x
    v = np.cos(p.theta + phi) * r - y
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def generate_deformed(ref: GrayImage, p: RotationFieldParams,
                      interp: InterpolationKind = InterpolationKind.BICUBIC,
                      fill: float = 0.0) -> GrayImage:
    """Render the reference after the rotation field by backward mapping.

    Output pixel q samples the reference at the analytic pre-image of q,
    i.e. q rotated by ``-theta`` about ``(x0, 0)``.
    """
    if not abs(p.theta) < math.pi / 2:
        raise InvalidParameter("|theta| must be below 90 degrees")
    ys, xs = np.mgrid[0:ref.height, 0:ref.width].astype(np.float64)
    c, s = math.cos(p.theta), math.sin(p.theta)
    dx = xs - p.x0
    src_x = p.x0 + c * dx - s * ys
    src_y = s * dx + c * ys
    return GrayImage(sample_many(ref, src_x, src_y, interp, fill))


def euler_rotation_matrix(a: EulerAngles) -> np.ndarray:
    """R = Rz(alpha) @ Ry(beta) @ Rx(gamma), written out entry by entry."""
    ca, sa = math.cos(a.alpha), math.sin(a.alpha)
    cb, sb = math.cos(a.beta), math.sin(a.beta)
    cg, sg = math.cos(a.gamma), math.sin(a.gamma)
    return np.array([
        [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
        [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
        [-sb, cb * sg, cb * cg],
    ])


def camera_rotation_homography(a: EulerAngles, cam: VirtualCamera) -> Homography:
    """H = K R K^-1, the image map induced by rotating a camera about its centre."""
    K = cam.K
    try:
        return Homography(K @ euler_rotation_matrix(a) @ np.linalg.inv(K))
    except Exception as exc:  # singular or h33 == 0
        raise GeometryViolation(f"rotation {a} gives a degenerate homography: {exc}") from exc


def simulate_camera_rotation(img: GrayImage, a: EulerAngles, cam: VirtualCamera | None = None,
                             fill: float = 0.0) -> tuple[GrayImage, Homography]:
    """Warp ``img`` as seen by the rotated camera; returns the image and H_sim.

    ``out(x) = img(H_sim x)``, so H_sim maps simulated-view pixels to
    original-view pixels and its inverse is what rectification must undo.
    """
    if cam is None:
        cam = VirtualCamera.for_image(img.width, img.height)
    h = camera_rotation_homography(a, cam)
    # the projective denominator is affine in (x, y): checking the corners covers the canvas
    m = h.matrix
    w, hh = img.width - 1, img.height - 1
    den = np.array([m[2, 0] * x + m[2, 1] * y + m[2, 2] for x, y in ((0, 0), (w, 0), (w, hh), (0, hh))])
    if not (np.all(den > 1e-9) or np.all(den < -1e-9)):
        raise GeometryViolation(f"rotation {a} puts the horizon line inside the image")
    return rectify_image(img, h, fill=fill), h
