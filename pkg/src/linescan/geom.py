"""Geometric primitives shared by the whole toolkit.

3-vectors and homogeneous points are plain float64 numpy arrays; the classes
below are thin immutable wrappers that carry the invariants the rest of the
pipeline relies on (proper rotations, non-degenerate planes, ...).

All values are 64-bit floats. Angles are radians, lengths are meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePlane,
    LineInPlane,
    ParallelLinePlane,
    RankDeficient,
)

ROTATION_TOL = 1e-9


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a float64 3-vector from components or any length-3 sequence."""
    if y is None:
        v = np.asarray(x, dtype=np.float64)
        if v.shape != (3,):
            raise ValueError(f"expected 3 components, got shape {v.shape}")
        return v.copy()
    return np.array([x, y, z], dtype=np.float64)


def homogenize(p: np.ndarray) -> np.ndarray:
    """(x, y, z) -> (x, y, z, 1)."""
    p = np.asarray(p, dtype=np.float64)
    return np.append(p, 1.0)


def dehomogenize(ph: np.ndarray) -> np.ndarray:
    """(x, y, z, w) -> (x/w, y/w, z/w). Exact for w == 1."""
    ph = np.asarray(ph, dtype=np.float64)
    w = ph[-1]
    if w == 0.0:
        raise ValueError("point at infinity: w = 0")
    if w == 1.0:
        return ph[:-1].copy()
    return ph[:-1] / w


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Pose:
    """Rigid transform p' = R @ p + t.

    Used both as an extrinsic world->camera transform and for object/laser
    placement. R must be a proper rotation; the constructor enforces it.
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = _frozen(self.R)
        t = _frozen(self.t)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("Pose needs a 3x3 rotation and a 3-vector translation")
        if np.linalg.norm(R.T @ R - np.eye(3)) > ROTATION_TOL:
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("R is not a proper rotation (det != +1)")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform one point or an (N, 3) batch."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.R.T + self.t

    def rotate(self, v: np.ndarray) -> np.ndarray:
        """Rotate a direction (no translation)."""
        v = np.asarray(v, dtype=np.float64)
        return v @ self.R.T

    def compose(self, other: "Pose") -> "Pose":
        """self * other: apply `other` first, then `self`."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix from an axis-angle 3-vector (angle = ||w||)."""
    w = np.asarray(w, dtype=np.float64)
    angle = np.linalg.norm(w)
    if angle < 1e-12:
        K = np.array(
            [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]], dtype=np.float64
        )
        return np.eye(3) + K + 0.5 * (K @ K)
    return axis_angle(w, angle)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector of a rotation matrix (inverse of rotation_exp)."""
    R = np.asarray(R, dtype=np.float64)
    cos_a = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle < 1e-9:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - angle < 1e-6:
        # near pi: axis from the dominant column of R + I
        B = R + np.eye(3)
        k = int(np.argmax(np.linalg.norm(B, axis=0)))
        axis = B[:, k] / np.linalg.norm(B[:, k])
        return axis * angle
    axis = np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    ) / (2.0 * np.sin(angle))
    return axis * angle


def axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix about an arbitrary axis (Rodrigues)."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        raise ValueError("zero rotation axis")
    k = axis / n
    K = np.array(
        [[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]], dtype=np.float64
    )
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class Line3:
    """Parametric line p = l0 + lam * v. Direction need not be unit."""

    l0: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        l0 = _frozen(self.l0)
        v = _frozen(self.v)
        if l0.shape != (3,) or v.shape != (3,):
            raise ValueError("Line3 needs two 3-vectors")
        if np.linalg.norm(v) == 0.0:
            raise ValueError("line direction must be nonzero")
        object.__setattr__(self, "l0", l0)
        object.__setattr__(self, "v", v)

    def point_at(self, lam: float) -> np.ndarray:
        return self.l0 + lam * self.v


@dataclass(frozen=True)
class PlaneParams:
    """Plane as the four-vector (a, b, c, d) of a*x + b*y + c*z + d = 0."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.a == 0.0 and self.b == 0.0 and self.c == 0.0:
            raise DegeneratePlane("plane normal (a, b, c) is zero")

    @staticmethod
    def from_array(phi: np.ndarray) -> "PlaneParams":
        phi = np.asarray(phi, dtype=np.float64)
        return PlaneParams(phi[0], phi[1], phi[2], phi[3])

    @staticmethod
    def from_point_normal(p0: np.ndarray, n: np.ndarray) -> "PlaneParams":
        n = np.asarray(n, dtype=np.float64)
        p0 = np.asarray(p0, dtype=np.float64)
        return PlaneParams(n[0], n[1], n[2], -float(np.dot(n, p0)))

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=np.float64)

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c], dtype=np.float64)

    def normalized(self) -> "PlaneParams":
        """Same plane with unit normal and d <= 0 (sign fixed for comparisons)."""
        phi = self.as_array() / np.linalg.norm(self.normal)
        if phi[3] > 0.0 or (phi[3] == 0.0 and _first_nonzero_sign(phi[:3]) < 0.0):
            phi = -phi
        return PlaneParams.from_array(phi)

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        """Signed point-plane distance (plane residual / ||n||)."""
        p = np.asarray(p, dtype=np.float64)
        return (p @ self.normal + self.d) / np.linalg.norm(self.normal)

    def point_on_plane(self) -> np.ndarray:
        """The plane point nearest the origin: p0 = -d n / ||n||^2."""
        return plane_point_from_four_vector(self)


def _first_nonzero_sign(v: np.ndarray) -> float:
    for x in v:
        if x != 0.0:
            return np.sign(x)
    return 1.0


def plane_point_from_four_vector(plane: PlaneParams) -> np.ndarray:
    """Point on the plane nearest the origin, p0 = -d n / ||n||^2."""
    n = plane.normal
    nn = float(n @ n)
    if nn == 0.0:
        raise DegeneratePlane("plane normal (a, b, c) is zero")
    return -plane.d * n / nn


def line_plane_intersect(line: Line3, plane: PlaneParams) -> np.ndarray:
    """Intersection point of a parametric line with a plane.

    Solves n . (l0 + lam v - p0) = 0 for lam. Raises ParallelLinePlane when
    |v . n| <= 1e-9 ||v|| ||n|| (relative parallelism test), and the subclass
    LineInPlane when additionally l0 already satisfies the plane equation.
    """
    n = plane.normal
    vn = float(line.v @ n)
    eps = 1e-9 * np.linalg.norm(line.v) * np.linalg.norm(n)
    if abs(vn) <= eps:
        residual = abs(float(line.l0 @ n) + plane.d)
        if residual <= 1e-12:
            raise LineInPlane("line lies in the plane")
        raise ParallelLinePlane("line is parallel to the plane")
    p0 = plane_point_from_four_vector(plane)
    lam = float((p0 - line.l0) @ n) / vn
    return line.point_at(lam)


def intersect_param(line: Line3, plane: PlaneParams) -> float:
    """Line parameter lam of the line-plane intersection (same guards)."""
    n = plane.normal
    vn = float(line.v @ n)
    eps = 1e-9 * np.linalg.norm(line.v) * np.linalg.norm(n)
    if abs(vn) <= eps:
        residual = abs(float(line.l0 @ n) + plane.d)
        if residual <= 1e-12:
            raise LineInPlane("line lies in the plane")
        raise ParallelLinePlane("line is parallel to the plane")
    p0 = plane_point_from_four_vector(plane)
    return float((p0 - line.l0) @ n) / vn


def transform_plane(plane: PlaneParams, pose: Pose) -> PlaneParams:
    """Re-express a plane in the frame that `pose` maps into.

    If pose maps frame A points to frame B (p_B = R p_A + t), the input plane
    is in frame-A coordinates and the result is the same plane in frame B.
    """
    n_b = pose.R @ plane.normal
    d_b = plane.d - float(n_b @ pose.t)
    return PlaneParams(n_b[0], n_b[1], n_b[2], d_b)


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Proper rotation closest to M in Frobenius norm (orthogonal Procrustes).

    SVD-based: R = U diag(1, 1, det(U V^T)) V^T. The det correction keeps the
    result in SO(3) even when the unconstrained optimum is a reflection.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (3, 3):
        raise ValueError("expected a 3x3 matrix")
    U, S, Vt = np.linalg.svd(M)
    if S[-1] <= 1e-12:
        raise RankDeficient(f"smallest singular value {S[-1]:.3e} <= 1e-12")
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt
