"""Seeded random board poses for calibration data generation.

Poses keep the whole board inside the frame (projected-corner check), limit
tilt to 60 deg from fronto-parallel, and keep the board's +x / +y axes within
90 deg of the image axes so detected corner grids order deterministically.
"""

from __future__ import annotations

import numpy as np

from ..camera import CameraRig, project
from ..errors import BehindCamera, ConfigError
from ..geom import PlaneParams, Pose, axis_angle, rot_z
from ..scene import CheckerboardSpec


def generate_poses(
    seed: int,
    count: int,
    rig: CameraRig,
    spec: CheckerboardSpec,
    distance_range=(0.55, 0.95),
    max_tilt_deg: float = 40.0,
    max_roll_deg: float = 25.0,
    lateral_frac: float = 0.35,
    margin_px: float = 12.0,
    require_laser_plane: PlaneParams | None = None,
    max_attempts: int = 20000,
) -> list:
    """Deterministic list of `count` valid board poses (board -> world).

    Rejection-samples distance / lateral offset / tilt / roll until the
    projected corner check passes. When require_laser_plane is given, the
    plane must also cut a chord of at least half the sheet height across the
    board (so the stripe is usable for laser calibration).
    """
    rng = np.random.default_rng(seed)
    corners_board = np.hstack(
        [spec.corner_grid(), np.zeros((spec.inner_cols * spec.inner_rows, 1))]
    )
    hw, hh = spec.sheet_w / 2.0, spec.sheet_h / 2.0
    sheet = np.array(
        [[-hw, -hh, 0.0], [hw, -hh, 0.0], [hw, hh, 0.0], [-hw, hh, 0.0]]
    )
    W, H = rig.intrinsics.width, rig.intrinsics.height
    poses = []
    for _ in range(max_attempts):
        if len(poses) == count:
            break
        z = rng.uniform(*distance_range)
        extent = z * lateral_frac
        center = np.array(
            [rng.uniform(-extent, extent), rng.uniform(-extent, extent) * 0.75, z]
        )
        tilt = np.deg2rad(rng.uniform(0.0, max_tilt_deg))
        tilt_axis_angle = rng.uniform(0.0, 2.0 * np.pi)
        axis = np.array([np.cos(tilt_axis_angle), np.sin(tilt_axis_angle), 0.0])
        roll = np.deg2rad(rng.uniform(-max_roll_deg, max_roll_deg))
        R = axis_angle(axis, tilt) @ rot_z(roll)
        pose = Pose(R, center)
        if np.rad2deg(np.arccos(np.clip(R[2, 2], -1, 1))) > 60.0:
            continue
        try:
            px = project(rig, pose.apply(np.vstack([corners_board, sheet])))
        except BehindCamera:
            continue
        if (
            px[:, 0].min() < margin_px
            or px[:, 0].max() > W - 1 - margin_px
            or px[:, 1].min() < margin_px
            or px[:, 1].max() > H - 1 - margin_px
        ):
            continue
        if require_laser_plane is not None and not _stripe_crosses_board(
            require_laser_plane, pose, spec
        ):
            continue
        poses.append(pose)
    if len(poses) < count:
        raise ConfigError(
            f"pose generator produced only {len(poses)}/{count} valid poses"
        )
    return poses


def _stripe_crosses_board(plane: PlaneParams, board_pose: Pose,
                          spec: CheckerboardSpec, min_chord_frac: float = 0.5) -> bool:
    """True when the laser plane cuts a long enough chord across the sheet."""
    # express the laser plane in board coordinates (z = 0 there)
    n_b = board_pose.R.T @ plane.normal
    d_b = plane.d + float(plane.normal @ board_pose.t)
    # intersection with z = 0: n_b.x * x + n_b.y * y + d_b = 0
    a, b = n_b[0], n_b[1]
    norm = np.hypot(a, b)
    if norm < 1e-12:
        return False
    hw, hh = spec.sheet_w / 2.0, spec.sheet_h / 2.0
    pts = []
    for x in (-hw, hw):
        if abs(b) > 1e-12:
            y = -(a * x + d_b) / b
            if -hh <= y <= hh:
                pts.append((x, y))
    for y in (-hh, hh):
        if abs(a) > 1e-12:
            x = -(b * y + d_b) / a
            if -hw <= x <= hw:
                pts.append((x, y))
    if len(pts) < 2:
        return False
    pts = np.array(pts)
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    return float(d.max()) >= min_chord_frac * spec.sheet_h
