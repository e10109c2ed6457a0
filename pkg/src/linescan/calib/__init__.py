"""Calibration solvers: homography, intrinsics, extrinsics, laser plane."""

from .lm import LMOptions, LMReport, lm_solve
from .homography import (
    Correspondence2D3D,
    Homography,
    estimate_homography_dlt,
    homography_from_pose,
    pose_from_homography,
    refine_homography,
    transfer_error,
)
from .zhang import CalibView, CameraCalibration, zhang_closed_form, zhang_intrinsics
from .planefit import PlaneFit, backproject_laser_pixels, fit_laser_plane
from .corners import detect_checkerboard, refine_corners, synthetic_corners

__all__ = [
    "LMOptions",
    "LMReport",
    "lm_solve",
    "Correspondence2D3D",
    "Homography",
    "estimate_homography_dlt",
    "refine_homography",
    "transfer_error",
    "pose_from_homography",
    "homography_from_pose",
    "CalibView",
    "CameraCalibration",
    "zhang_closed_form",
    "zhang_intrinsics",
    "PlaneFit",
    "fit_laser_plane",
    "backproject_laser_pixels",
    "detect_checkerboard",
    "refine_corners",
    "synthetic_corners",
]
