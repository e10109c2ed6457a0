"""Triangulation of laser profiles, scan assembly, evaluation vs ground truth.

Each valid profile row back-projects to the camera ray through its sub-pixel
column; the 3D point is the ray's intersection with the calibrated laser
plane, p = (p0 . n) / (v . n) * v with v = K^-1 (u, v, 1). Depth statistics
use the camera-frame z convention throughout (never Euclidean ray length).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, unproject_dirs
from .errors import FrameTagMismatch, NoOverlap
from .extract import LaserProfile
from .geom import PlaneParams, Pose, plane_point_from_four_vector

FLAG_OK = "ok"
FLAG_PARALLEL = "parallel_ray"
FLAG_BEHIND = "behind_camera"


@dataclass
class PointCloud:
    """Tagged point set with per-point provenance (frame id, image row)."""

    points: np.ndarray  # (N, 3)
    frames: np.ndarray  # (N,) int
    rows: np.ndarray  # (N,) int
    valid: np.ndarray  # (N,) bool
    flags: np.ndarray  # (N,) <U12
    frame_tag: str = "camera"  # camera | world

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        self.frames = np.asarray(self.frames, dtype=np.int64).reshape(n)
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(n)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(n)
        self.flags = np.asarray(self.flags, dtype="<U12").reshape(n)

    def __len__(self) -> int:
        return len(self.points)

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]


def triangulate(profile: LaserProfile, K: Intrinsics, plane: PlaneParams,
                frame: int = 0) -> PointCloud:
    """Camera-frame points for every valid profile row.

    Per-point failures (ray parallel to the plane, intersection behind the
    camera) only invalidate that point, never the frame.
    """
    rows = np.flatnonzero(profile.valid)
    n = len(rows)
    pts = np.zeros((n, 3))
    ok = np.zeros(n, dtype=bool)
    flags = np.full(n, FLAG_OK, dtype="<U12")
    if n:
        px = np.column_stack([profile.col[rows], rows.astype(np.float64)])
        v = unproject_dirs(K, px)
        nvec = plane.normal
        p0 = plane_point_from_four_vector(plane)
        vn = v @ nvec
        eps = 1e-9 * np.linalg.norm(v, axis=1) * np.linalg.norm(nvec)
        parallel = np.abs(vn) <= eps
        lam = np.zeros(n)
        np.divide(float(p0 @ nvec), vn, out=lam, where=~parallel)
        behind = (~parallel) & (lam <= 0.0)
        ok = ~(parallel | behind)
        flags[parallel] = FLAG_PARALLEL
        flags[behind] = FLAG_BEHIND
        pts = lam[:, None] * v
        pts[~ok] = 0.0
    return PointCloud(
        points=pts,
        frames=np.full(n, frame, dtype=np.int64),
        rows=rows,
        valid=ok,
        flags=flags,
        frame_tag="camera",
    )


def assemble_scan(frames) -> PointCloud:
    """Merge per-frame camera-frame clouds into one world-frame cloud.

    frames: iterable of (PointCloud, Pose) where the pose maps camera ->
    world for that frame. Output is sorted by (frame, row), so the result is
    independent of input order.
    """
    parts = []
    for cloud, motion in frames:
        if cloud.frame_tag != "camera":
            raise FrameTagMismatch(
                f"expected camera-frame cloud, got {cloud.frame_tag!r}"
            )
        parts.append(
            PointCloud(
                points=motion.apply(cloud.points),
                frames=cloud.frames,
                rows=cloud.rows,
                valid=cloud.valid,
                flags=cloud.flags,
                frame_tag="world",
            )
        )
    if not parts:
        return PointCloud(
            points=np.zeros((0, 3)),
            frames=np.zeros(0, dtype=np.int64),
            rows=np.zeros(0, dtype=np.int64),
            valid=np.zeros(0, dtype=bool),
            flags=np.zeros(0, dtype="<U12"),
            frame_tag="world",
        )
    merged = PointCloud(
        points=np.vstack([p.points for p in parts]),
        frames=np.concatenate([p.frames for p in parts]),
        rows=np.concatenate([p.rows for p in parts]),
        valid=np.concatenate([p.valid for p in parts]),
        flags=np.concatenate([p.flags for p in parts]),
        frame_tag="world",
    )
    order = np.lexsort((merged.rows, merged.frames))
    return PointCloud(
        points=merged.points[order],
        frames=merged.frames[order],
        rows=merged.rows[order],
        valid=merged.valid[order],
        flags=merged.flags[order],
        frame_tag="world",
    )


def cloud_from_profile_depth(profile: LaserProfile, depths: np.ndarray,
                             K: Intrinsics, frame: int = 0) -> PointCloud:
    """Cloud from a profile plus per-row ground-truth depths.

    Each point is the profile pixel's ray scaled to the given camera-frame z:
    p = depth * K^-1 (u, v, 1).
    """
    rows = np.flatnonzero(profile.valid & np.isfinite(depths))
    px = np.column_stack([profile.col[rows], rows.astype(np.float64)])
    v = unproject_dirs(K, px)  # z-component is exactly 1
    pts = v * depths[rows][:, None]
    return PointCloud(
        points=pts,
        frames=np.full(len(rows), frame, dtype=np.int64),
        rows=rows,
        valid=np.ones(len(rows), dtype=bool),
        flags=np.full(len(rows), FLAG_OK, dtype="<U12"),
        frame_tag="camera",
    )


@dataclass
class EvalReport:
    """Signed z-error statistics plus the mean normalized difference vector."""

    n: int
    rms_z: float
    mean_z: float
    max_abs_z: float
    mean_diff_direction: np.ndarray  # mean of unit (estimate - truth) vectors
    frames: np.ndarray
    rows: np.ndarray
    z_est: np.ndarray
    z_true: np.ndarray
    dz: np.ndarray

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rms_z": self.rms_z,
            "mean_z": self.mean_z,
            "max_abs_z": self.max_abs_z,
            "mean_diff_direction": list(self.mean_diff_direction),
        }


def evaluate(cloud: PointCloud, truth: PointCloud) -> EvalReport:
    """Compare two clouds matched by (frame, row).

    Reports per-point signed z-error (estimate minus truth), its RMS / mean /
    max-abs, and the average of the normalized 3D difference vectors (the
    direction of any systematic bias). Raises NoOverlap when no valid
    correspondence exists.
    """
    if cloud.frame_tag != truth.frame_tag:
        raise FrameTagMismatch(
            f"cloud is {cloud.frame_tag!r}, truth is {truth.frame_tag!r}"
        )
    key_a = {(f, r): i for i, (f, r) in
             enumerate(zip(cloud.frames, cloud.rows)) if cloud.valid[i]}
    pairs = [
        (key_a[(f, r)], j)
        for j, (f, r) in enumerate(zip(truth.frames, truth.rows))
        if truth.valid[j] and (f, r) in key_a
    ]
    if not pairs:
        raise NoOverlap("no common valid (frame, row) entries")
    ia = np.array([p[0] for p in pairs])
    ib = np.array([p[1] for p in pairs])
    pa = cloud.points[ia]
    pb = truth.points[ib]
    dz = pa[:, 2] - pb[:, 2]
    diff = pa - pb
    norms = np.linalg.norm(diff, axis=1)
    nz = norms > 1e-15
    mean_dir = (
        (diff[nz] / norms[nz][:, None]).mean(axis=0) if np.any(nz) else np.zeros(3)
    )
    return EvalReport(
        n=len(pairs),
        rms_z=float(np.sqrt(np.mean(dz**2))),
        mean_z=float(np.mean(dz)),
        max_abs_z=float(np.max(np.abs(dz))),
        mean_diff_direction=mean_dir,
        frames=cloud.frames[ia],
        rows=cloud.rows[ia],
        z_est=pa[:, 2],
        z_true=pb[:, 2],
        dz=dz,
    )
