"""Pinhole camera model: intrinsics, projection, back-projection, distortion.

Pixel convention: pixel centers sit at integer coordinates, the origin is the
top-left pixel center, u grows rightwards and v downwards. The principal point
of a centered sensor is (width / 2, height / 2).

Distortion is Brown-Conrady (k1, k2, k3 radial + p1, p2 tangential), applied
to normalized image coordinates. The renderer itself is an ideal pinhole and
never applies distortion; these functions are for analysis paths and the
optional post-render warp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, NoConvergence
from .geom import Line3, Pose


@dataclass(frozen=True)
class Intrinsics:
    """Camera matrix K = [[fx, s, cx], [0, fy, cy], [0, 0, 1]] plus sensor size."""

    fx: float
    fy: float
    s: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.s, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse_matrix(self) -> np.ndarray:
        """Closed-form K^-1 (upper triangular inverse)."""
        fx, fy, s, cx, cy = self.fx, self.fy, self.s, self.cx, self.cy
        return np.array(
            [
                [1.0 / fx, -s / (fx * fy), cy * s / (fx * fy) - cx / fx],
                [0.0, 1.0 / fy, -cy / fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def scaled(self, factor: float) -> "Intrinsics":
        """Intrinsics for the same lens at a resampled resolution."""
        return Intrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            s=self.s * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )


@dataclass(frozen=True)
class Distortion:
    """Brown-Conrady coefficients. All zero means the exact identity."""

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def is_zero(self) -> bool:
        return self.k1 == self.k2 == self.k3 == self.p1 == self.p2 == 0.0


@dataclass(frozen=True)
class CameraRig:
    """Intrinsics + distortion + extrinsic world->camera pose."""

    intrinsics: Intrinsics
    distortion: Distortion
    pose_cw: Pose


def apply_distortion(d: Distortion, p_norm) -> np.ndarray:
    """Distort normalized image coordinates.

    x' = x (1 + k1 r^2 + k2 r^4 + k3 r^6) + 2 p1 x y + p2 (r^2 + 2 x^2)
    y' = y (1 + k1 r^2 + k2 r^4 + k3 r^6) + p1 (r^2 + 2 y^2) + 2 p2 x y

    Accepts a single (x, y) pair or an (N, 2) batch.
    """
    p = np.asarray(p_norm, dtype=np.float64)
    if d.is_zero():
        return p.copy()
    single = p.ndim == 1
    p = np.atleast_2d(p)
    x, y = p[:, 0], p[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
    xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y
    out = np.stack([xd, yd], axis=-1)
    return out[0] if single else out


def undistort(d: Distortion, p_dist, max_iter: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Invert apply_distortion by fixed-point iteration.

    Starts from the distorted coordinate and iterates
    x <- x' - (distort(x) - x) until the forward residual drops below tol.
    Raises NoConvergence after max_iter.
    """
    pd = np.asarray(p_dist, dtype=np.float64)
    if d.is_zero():
        return pd.copy()
    single = pd.ndim == 1
    pd = np.atleast_2d(pd)
    p = pd.copy()
    for _ in range(max_iter):
        fwd = apply_distortion(d, p)
        err = fwd - pd
        p = p - err
        if np.max(np.abs(err)) < tol:
            return p[0] if single else p
    # check once more: the last update may have landed inside tolerance
    err = apply_distortion(d, p) - pd
    if np.max(np.abs(err)) < tol:
        return p[0] if single else p
    raise NoConvergence(
        f"undistort did not converge in {max_iter} iterations "
        f"(residual {np.max(np.abs(err)):.3e})",
        best=p[0] if single else p,
    )


def project(rig: CameraRig, p_w) -> np.ndarray:
    """World point(s) to pixel(s): K * distort(normalize(T_cw p_w)).

    Raises BehindCamera if any camera-frame z is <= 0.
    """
    p = np.asarray(p_w, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    pc = rig.pose_cw.apply(p)
    z = pc[:, 2]
    if np.any(z <= 0.0):
        raise BehindCamera("point has non-positive camera-frame z")
    pn = pc[:, :2] / z[:, None]
    pn = apply_distortion(rig.distortion, pn)
    K = rig.intrinsics
    u = K.fx * pn[:, 0] + K.s * pn[:, 1] + K.cx
    v = K.fy * pn[:, 1] + K.cy
    out = np.stack([u, v], axis=-1)
    return out[0] if single else out


def unproject_to_ray(intr: Intrinsics, pixel) -> Line3:
    """Back-project a pixel to the camera-frame ray through the origin.

    Direction is K^-1 (u, v, 1); no distortion (undistort the pixel first when
    consuming distorted imagery).
    """
    u, v = float(pixel[0]), float(pixel[1])
    d = intr.inverse_matrix() @ np.array([u, v, 1.0])
    return Line3(np.zeros(3), d)


def unproject_dirs(intr: Intrinsics, pixels: np.ndarray) -> np.ndarray:
    """Batched ray directions K^-1 (u, v, 1) for an (N, 2) pixel array."""
    px = np.asarray(pixels, dtype=np.float64)
    ones = np.ones((px.shape[0], 1))
    return np.hstack([px, ones]) @ intr.inverse_matrix().T
