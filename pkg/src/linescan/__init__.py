"""Virtual line-laser scanner toolkit.

A deterministic ray-casting simulator for scenes lit by a Gaussian-profile
line laser (with ground-truth depth / normal / laser-mask passes), together
with the calibration, laser-line extraction, and triangulation pipeline
needed to reconstruct geometry from the rendered images and quantify the
error against ground truth.
"""

from .camera import CameraRig, Distortion, Intrinsics
from .geom import Line3, PlaneParams, Pose
from .laser import LaserModel
from .render import RenderOutput, render
from .scene import CheckerboardSpec, Material, Scene, TriMesh

__all__ = [
    "CameraRig",
    "Distortion",
    "Intrinsics",
    "Line3",
    "PlaneParams",
    "Pose",
    "LaserModel",
    "RenderOutput",
    "render",
    "CheckerboardSpec",
    "Material",
    "Scene",
    "TriMesh",
]

__version__ = "0.1.0"
