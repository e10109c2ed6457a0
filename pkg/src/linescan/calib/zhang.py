"""Planar intrinsic calibration: closed-form initialization + bundle refinement.

The closed form stacks the two absolute-conic constraints per view
(v12' b = 0 and (v11 - v22)' b = 0 on the symmetric matrix B ~ K^-T K^-1),
solves for b by SVD, and reads the intrinsic parameters off B. A full-bundle
Levenberg-Marquardt pass over (K, every board pose) then minimizes the total
reprojection error. Distortion estimation is optional and off by default:
the virtual camera is an ideal pinhole.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..camera import Distortion, Intrinsics
from ..errors import DegenerateMotion, InsufficientViews
from ..geom import Pose, nearest_rotation, rotation_exp, rotation_log
from .homography import (
    Homography,
    corr_arrays,
    estimate_homography_dlt,
    pose_from_homography,
    refine_homography,
)
from .lm import LMOptions, lm_solve


@dataclass
class CalibView:
    """One calibration image: correspondences + recovered per-view quantities."""

    image_points: np.ndarray  # (N, 2) pixels
    world_points: np.ndarray  # (N, 2) board-plane meters (z = 0 implicit)
    laser_pixels: np.ndarray | None = None  # (M, 2) sub-pixel stripe samples
    view_id: int = 0
    homography: Homography | None = None
    pose: Pose | None = None  # board -> camera

    def __post_init__(self):
        self.image_points = np.asarray(self.image_points, dtype=np.float64).reshape(-1, 2)
        self.world_points = np.asarray(self.world_points, dtype=np.float64).reshape(-1, 2)
        if len(self.image_points) != len(self.world_points):
            raise ValueError("image/world point counts differ")
        if len(self.image_points) < 4:
            raise ValueError("each view needs >= 4 correspondences")

    def fit_homography(self, opts: LMOptions | None = None) -> Homography:
        H0 = estimate_homography_dlt((self.image_points, self.world_points))
        self.homography, _ = refine_homography(
            H0, (self.image_points, self.world_points), opts
        )
        return self.homography


@dataclass
class CameraCalibration:
    intrinsics: Intrinsics
    distortion: Distortion
    poses: list  # per-view board -> camera Pose
    rms_px: float
    per_view_rms: np.ndarray
    lm_report: object | None = None


def _vij(H: np.ndarray, i: int, j: int) -> np.ndarray:
    h_i, h_j = H[:, i], H[:, j]
    return np.array(
        [
            h_i[0] * h_j[0],
            h_i[0] * h_j[1] + h_i[1] * h_j[0],
            h_i[1] * h_j[1],
            h_i[2] * h_j[0] + h_i[0] * h_j[2],
            h_i[2] * h_j[1] + h_i[1] * h_j[2],
            h_i[2] * h_j[2],
        ]
    )


def zhang_closed_form(homographies, width: int, height: int) -> Intrinsics:
    """Linear intrinsics from >= 3 homographies of distinct board poses."""
    Hs = [h.H if isinstance(h, Homography) else np.asarray(h) for h in homographies]
    if len(Hs) < 3:
        raise InsufficientViews(f"need >= 3 views, got {len(Hs)}")
    V = []
    for H in Hs:
        V.append(_vij(H, 0, 1))
        V.append(_vij(H, 0, 0) - _vij(H, 1, 1))
    V = np.array(V)
    sv = np.linalg.svd(V, compute_uv=False)
    if sv[4] / sv[0] < 1e-10:
        raise DegenerateMotion(
            "conic system is rank deficient (board poses too similar?)"
        )
    _, _, Vt = np.linalg.svd(V)
    b = Vt[-1]
    B11, B12, B22, B13, B23, B33 = b
    if B11 < 0:
        B11, B12, B22, B13, B23, B33 = -b
    denom = B11 * B22 - B12 * B12
    if denom <= 0 or B11 <= 0:
        raise DegenerateMotion("conic estimate is not positive definite")
    cy = (B12 * B13 - B11 * B23) / denom
    lam = B33 - (B13 * B13 + cy * (B12 * B13 - B11 * B23)) / B11
    if lam / B11 <= 0 or lam * B11 / denom <= 0:
        raise DegenerateMotion("conic estimate yields imaginary focal length")
    fx = np.sqrt(lam / B11)
    fy = np.sqrt(lam * B11 / denom)
    s = -B12 * fx * fx * fy / lam
    cx = s * cy / fy - B13 * fx * fx / lam
    return Intrinsics(fx=fx, fy=fy, s=s, cx=cx, cy=cy, width=width, height=height)


def _project_all(params, views, fix_skew, n_k):
    fx, fy = params[0], params[1]
    if fix_skew:
        s = 0.0
        cx, cy = params[2], params[3]
    else:
        s = params[2]
        cx, cy = params[3], params[4]
    res = []
    for vi, view in enumerate(views):
        p = params[n_k + 6 * vi : n_k + 6 * vi + 6]
        R = rotation_exp(p[:3])
        t = p[3:]
        w = view.world_points
        pc = np.column_stack([w, np.zeros(len(w))]) @ R.T + t
        x = pc[:, 0] / pc[:, 2]
        y = pc[:, 1] / pc[:, 2]
        u = fx * x + s * y + cx
        v = fy * y + cy
        res.append(np.column_stack([u, v]) - view.image_points)
    return np.concatenate(res).ravel()


def zhang_intrinsics(views, width: int, height: int, fix_skew: bool = True,
                     refine: bool = True, opts: LMOptions | None = None) -> CameraCalibration:
    """Full planar calibration: per-view homographies, closed form, bundle LM.

    views: list of CalibView (homographies are fitted if absent). The bundle
    optimizes (fx, fy, [s,] cx, cy) plus an axis-angle + translation per view.
    Distortion is pinned to zero (virtual pinhole camera); estimate it
    separately if the imagery demands it.
    """
    if len(views) < 3:
        raise InsufficientViews(f"need >= 3 views, got {len(views)}")
    for i, v in enumerate(views):
        v.view_id = i
        if v.homography is None:
            v.fit_homography(opts)
    K0 = zhang_closed_form([v.homography for v in views], width, height)
    poses = [pose_from_homography(v.homography, K0) for v in views]
    if not refine:
        rms, per_view = _reproj_rms(K0, poses, views)
        for v, p in zip(views, poses):
            v.pose = p
        return CameraCalibration(K0, Distortion(), poses, rms, per_view)

    n_k = 4 if fix_skew else 5
    x0 = [K0.fx, K0.fy] + ([] if fix_skew else [K0.s]) + [K0.cx, K0.cy]
    for p in poses:
        x0.extend(rotation_log(p.R))
        x0.extend(p.t)
    x0 = np.array(x0, dtype=np.float64)
    x, report = lm_solve(
        lambda p: _project_all(p, views, fix_skew, n_k),
        x0,
        opts=opts or LMOptions(max_iter=60),
    )
    if fix_skew:
        K = Intrinsics(x[0], x[1], 0.0, x[2], x[3], width, height)
    else:
        K = Intrinsics(x[0], x[1], x[2], x[3], x[4], width, height)
    poses = []
    for vi in range(len(views)):
        p = x[n_k + 6 * vi : n_k + 6 * vi + 6]
        poses.append(Pose(nearest_rotation(rotation_exp(p[:3])), p[3:]))
    for v, p in zip(views, poses):
        v.pose = p
    rms, per_view = _reproj_rms(K, poses, views)
    return CameraCalibration(K, Distortion(), poses, rms, per_view, report)


def _reproj_rms(K: Intrinsics, poses, views):
    per_view = []
    total = []
    for pose, view in zip(poses, views):
        w = view.world_points
        pc = np.column_stack([w, np.zeros(len(w))]) @ pose.R.T + pose.t
        x = pc[:, 0] / pc[:, 2]
        y = pc[:, 1] / pc[:, 2]
        u = K.fx * x + K.s * y + K.cx
        v = K.fy * y + K.cy
        err = np.column_stack([u, v]) - view.image_points
        sq = np.sum(err**2, axis=1)
        per_view.append(np.sqrt(sq.mean()))
        total.append(sq)
    total = np.concatenate(total)
    return float(np.sqrt(total.mean())), np.array(per_view)
