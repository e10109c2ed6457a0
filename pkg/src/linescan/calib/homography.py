"""Planar homography estimation and pose recovery.

The board defines the world plane z = 0, so image <-> board mappings are 3x3
homographies H with p_img ~ H (x, y, 1). Estimation is DLT on
Hartley-normalized points, optionally refined by Levenberg-Marquardt on the
transfer (reprojection) error. pose_from_homography decomposes H through the
intrinsics into the board pose, projecting the column estimate onto SO(3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Intrinsics
from ..errors import CheiralityError, DegenerateConfiguration
from ..geom import Pose, nearest_rotation
from .lm import LMOptions, lm_solve


@dataclass(frozen=True)
class Correspondence2D3D:
    """One board-image correspondence: pixel (u, v) <-> board-plane (x, y)."""

    image: tuple
    world: tuple

    def __post_init__(self):
        if not (np.all(np.isfinite(self.image)) and np.all(np.isfinite(self.world))):
            raise ValueError("correspondence coordinates must be finite")
        object.__setattr__(self, "image", (float(self.image[0]), float(self.image[1])))
        object.__setattr__(self, "world", (float(self.world[0]), float(self.world[1])))


def corr_arrays(corrs):
    """(N, 2) image and world arrays from correspondences or array pairs."""
    if isinstance(corrs, tuple) and len(corrs) == 2:
        img = np.asarray(corrs[0], dtype=np.float64).reshape(-1, 2)
        wld = np.asarray(corrs[1], dtype=np.float64).reshape(-1, 2)
    else:
        img = np.array([c.image for c in corrs], dtype=np.float64)
        wld = np.array([c.world for c in corrs], dtype=np.float64)
    if img.shape != wld.shape:
        raise ValueError("image/world point counts differ")
    return img, wld


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, stored with ||H||_F = 1 and h33-region sign >= 0."""

    H: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        H = H / np.linalg.norm(H)
        sign = np.sign(H[2, 2]) if abs(H[2, 2]) > 1e-12 else np.sign(H.ravel()[np.argmax(np.abs(H))])
        if sign < 0:
            H = -H
        if abs(np.linalg.det(H)) <= 1e-12:
            raise DegenerateConfiguration("homography is rank deficient")
        H.flags.writeable = False
        object.__setattr__(self, "H", H)

    def apply(self, world_xy) -> np.ndarray:
        """Map board-plane points (N, 2) to pixels (N, 2)."""
        w = np.atleast_2d(np.asarray(world_xy, dtype=np.float64))
        ph = np.hstack([w, np.ones((len(w), 1))]) @ self.H.T
        return ph[:, :2] / ph[:, 2:3]

    def apply_inverse(self, image_uv) -> np.ndarray:
        """Map pixels (N, 2) back to board-plane coordinates (N, 2)."""
        p = np.atleast_2d(np.asarray(image_uv, dtype=np.float64))
        ph = np.hstack([p, np.ones((len(p), 1))]) @ np.linalg.inv(self.H).T
        return ph[:, :2] / ph[:, 2:3]


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity transform: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    if dist <= 0:
        raise DegenerateConfiguration("coincident points")
    s = np.sqrt(2.0) / dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def _check_not_collinear(pts: np.ndarray, label: str):
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    scale = max(sv[0], 1e-30)
    if sv[1] / scale < 1e-9:
        raise DegenerateConfiguration(f"{label} points are (near-)collinear")


def estimate_homography_dlt(corrs) -> Homography:
    """Direct linear transform with Hartley normalization.

    Needs >= 4 correspondences whose world points span the plane. Exact (to
    ~1e-8 px transfer error) on projectively consistent data.
    """
    img, wld = corr_arrays(corrs)
    if len(img) < 4:
        raise DegenerateConfiguration(f"need >= 4 correspondences, got {len(img)}")
    _check_not_collinear(wld, "world")
    _check_not_collinear(img, "image")
    Ti = _hartley_normalization(img)
    Tw = _hartley_normalization(wld)
    imgn = (np.hstack([img, np.ones((len(img), 1))]) @ Ti.T)[:, :2]
    wldn = (np.hstack([wld, np.ones((len(wld), 1))]) @ Tw.T)[:, :2]
    A = np.zeros((2 * len(img), 9))
    x, y = wldn[:, 0], wldn[:, 1]
    u, v = imgn[:, 0], imgn[:, 1]
    A[0::2, 3] = -x
    A[0::2, 4] = -y
    A[0::2, 5] = -1.0
    A[0::2, 6] = v * x
    A[0::2, 7] = v * y
    A[0::2, 8] = v
    A[1::2, 0] = x
    A[1::2, 1] = y
    A[1::2, 2] = 1.0
    A[1::2, 6] = -u * x
    A[1::2, 7] = -u * y
    A[1::2, 8] = -u
    _, _, Vt = np.linalg.svd(A)
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Ti) @ Hn @ Tw
    return Homography(H)


def transfer_error(H: Homography, corrs) -> np.ndarray:
    """Per-point pixel transfer error ||p_img - dehom(H p_world)||."""
    img, wld = corr_arrays(corrs)
    return np.linalg.norm(H.apply(wld) - img, axis=1)


def _reproj_residuals(h: np.ndarray, img: np.ndarray, wh: np.ndarray) -> np.ndarray:
    H = h.reshape(3, 3)
    ph = wh @ H.T
    return ((ph[:, :2] / ph[:, 2:3]) - img).ravel()


def _reproj_jacobian(h: np.ndarray, img: np.ndarray, wh: np.ndarray) -> np.ndarray:
    H = h.reshape(3, 3)
    ph = wh @ H.T
    s = ph[:, 2]
    u = ph[:, 0] / s
    v = ph[:, 1] / s
    n = len(wh)
    J = np.zeros((2 * n, 9))
    J[0::2, 0:3] = wh / s[:, None]
    J[0::2, 6:9] = -wh * (u / s)[:, None]
    J[1::2, 3:6] = wh / s[:, None]
    J[1::2, 6:9] = -wh * (v / s)[:, None]
    return J


def refine_homography(H0: Homography, corrs, opts: LMOptions | None = None):
    """LM refinement of the summed squared transfer error.

    Optimizes all 9 entries (the scale gauge is handled by damping) and
    renormalizes. Returns (Homography, LMReport); the final cost never
    exceeds the initial one.
    """
    img, wld = corr_arrays(corrs)
    wh = np.hstack([wld, np.ones((len(wld), 1))])
    h0 = H0.H.ravel().copy()
    h, report = lm_solve(
        lambda h: _reproj_residuals(h, img, wh),
        h0,
        jacobian=lambda h: _reproj_jacobian(h, img, wh),
        opts=opts,
    )
    return Homography(h.reshape(3, 3)), report


def pose_from_homography(H: Homography, K: Intrinsics) -> Pose:
    """Board pose (board frame -> camera frame) from its homography.

    r1 = lam K^-1 h1, r2 = lam K^-1 h2, r3 = r1 x r2, t = lam K^-1 h3 with
    lam = 1 / ||K^-1 h1||; the column matrix is projected to the nearest
    rotation. The sign of H is chosen so the board sits in front of the
    camera (t_z > 0); CheiralityError if neither sign works.
    """
    A = K.inverse_matrix() @ H.H
    lam = 1.0 / np.linalg.norm(A[:, 0])
    t = lam * A[:, 2]
    if t[2] == 0.0:
        raise CheiralityError("board plane passes through the camera origin")
    if t[2] < 0.0:
        A = -A
        t = -t
    r1 = lam * A[:, 0]
    r2 = lam * A[:, 1]
    r3 = np.cross(r1, r2)
    R = nearest_rotation(np.column_stack([r1, r2, r3]))
    return Pose(R, t)


def homography_from_pose(K: Intrinsics, pose: Pose) -> Homography:
    """Forward synthesis H = K [r1 r2 t] for a board pose (z = 0 plane)."""
    M = np.column_stack([pose.R[:, 0], pose.R[:, 1], pose.t])
    return Homography(K.matrix() @ M)
