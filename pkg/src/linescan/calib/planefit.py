"""Laser-plane estimation from backprojected stripe points.

Stripe pixels observed on the calibration board are mapped to the board plane
through the inverse homography and into the camera frame through the board
pose. Stacking all camera-frame points gives the homogeneous system
[x y z 1] phi = 0; the SVD right singular vector of the smallest singular
value initializes phi, and Levenberg-Marquardt refines the pointwise error

    eps_i = |p_i . phi| / ||n|| + (||n|| - 1)^2

whose penalty term pins the normal length (avoiding the trivial zero
solution) while the first term is the true point-plane distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Intrinsics
from ..errors import CollinearPoints, MissingLaserPixels
from ..geom import PlaneParams
from .lm import LMOptions, LMReport, lm_solve
from .zhang import CalibView


@dataclass
class PlaneFit:
    plane: PlaneParams  # normalized: unit normal, d <= 0
    phi_init: np.ndarray  # SVD initialization (unit normal)
    mean_abs_distance: float
    rms_distance: float
    max_abs_distance: float
    n_points: int
    lm_report: LMReport

    def angle_to(self, other: PlaneParams) -> float:
        """Unsigned angle between plane normals, radians."""
        a = self.plane.normal / np.linalg.norm(self.plane.normal)
        b = other.normal / np.linalg.norm(other.normal)
        return float(np.arccos(np.clip(abs(a @ b), -1.0, 1.0)))


def backproject_laser_pixels(view: CalibView, K: Intrinsics | None = None) -> np.ndarray:
    """Stripe pixels -> camera-frame 3D points via the board plane.

    p_board = H^-1 p_img (z = 0 implicit), then p_cam = R p_board + t using
    the view's recovered pose. K is unused in the computation (the homography
    already encodes it) but accepted for interface symmetry.
    """
    if view.laser_pixels is None or len(view.laser_pixels) == 0:
        raise MissingLaserPixels(f"view {view.view_id} has no laser pixels")
    if view.homography is None or view.pose is None:
        raise ValueError("view needs a recovered homography and pose")
    board_xy = view.homography.apply_inverse(view.laser_pixels)
    board_xyz = np.column_stack([board_xy, np.zeros(len(board_xy))])
    return view.pose.apply(board_xyz)


def _eps_residuals(phi: np.ndarray, P: np.ndarray) -> np.ndarray:
    n = phi[:3]
    m = np.linalg.norm(n)
    q = P @ phi
    return np.abs(q) / m + (m - 1.0) ** 2


def _eps_jacobian(phi: np.ndarray, P: np.ndarray) -> np.ndarray:
    n = phi[:3]
    m = np.linalg.norm(n)
    q = P @ phi
    sgn = np.sign(q)
    J = sgn[:, None] * P / m
    J[:, :3] += (-np.abs(q) / m**3 + 2.0 * (m - 1.0) / m)[:, None] * n[None, :]
    return J


def fit_laser_plane(points, opts: LMOptions | None = None) -> PlaneFit:
    """Total-least-squares init + penalized LM refinement of the laser plane.

    points: (N, 3) camera-frame stripe points, N >= 3, not all collinear.
    The returned plane is normalized (unit normal, d <= 0); the LM cost is
    monotone non-increasing by construction.
    """
    P3 = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(P3) < 3:
        raise CollinearPoints(f"need >= 3 points, got {len(P3)}")
    centered = P3 - P3.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-30) or sv[0] == 0.0:
        raise CollinearPoints("points are (near-)collinear; plane is unconstrained")

    P = np.column_stack([P3, np.ones(len(P3))])
    _, _, Vt = np.linalg.svd(P, full_matrices=False)
    phi0 = Vt[-1]
    phi0 = phi0 / np.linalg.norm(phi0[:3])  # start on the ||n|| = 1 manifold

    phi, report = lm_solve(
        lambda p: _eps_residuals(p, P),
        phi0,
        jacobian=lambda p: _eps_jacobian(p, P),
        opts=opts or LMOptions(),
    )
    plane = PlaneParams.from_array(phi).normalized()
    dist = np.abs(P3 @ plane.normal + plane.d)
    return PlaneFit(
        plane=plane,
        phi_init=phi0,
        mean_abs_distance=float(dist.mean()),
        rms_distance=float(np.sqrt((dist**2).mean())),
        max_abs_distance=float(dist.max()),
        n_points=len(P3),
        lm_report=report,
    )
