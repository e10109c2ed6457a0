"""Scan configuration: JSON schema, validation, and per-frame scene assembly.

One JSON document describes camera, laser, lights, objects, render settings,
and either a rig sweep (camera + laser translated per frame) or generated
board poses (calibration datasets). Unknown keys are rejected with the JSON
path of the offending key; "notes" fields are allowed everywhere as comments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from ..camera import CameraRig, Distortion, Intrinsics
from ..errors import ConfigError
from ..geom import PlaneParams, Pose, rotation_exp
from ..laser import LaserModel, laser_plane, standard_placement
from ..scene import (
    CheckerboardSpec,
    Material,
    PointLight,
    Scene,
    checkerboard_scene,
    load_mesh,
    make_icosphere,
    make_quad,
    make_v_groove,
)
from . import poses as pose_gen
from .formats import read_json

_POSE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "rotation": {
            "type": "array", "items": {"type": "number"},
            "minItems": 9, "maxItems": 9,
        },
        "rotvec": {
            "type": "array", "items": {"type": "number"},
            "minItems": 3, "maxItems": 3,
        },
        "translation": {
            "type": "array", "items": {"type": "number"},
            "minItems": 3, "maxItems": 3,
        },
        "notes": {"type": "string"},
    },
}

_RGB = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

_OBJECT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {
            "enum": ["checkerboard", "plane", "icosphere", "v_groove", "mesh"]
        },
        "pose": _POSE,
        "notes": {"type": "string"},
        # checkerboard
        "inner_cols": {"type": "integer", "minimum": 2},
        "inner_rows": {"type": "integer", "minimum": 2},
        "square_size": {"type": "number", "exclusiveMinimum": 0},
        "sheet_w": {"type": "number", "exclusiveMinimum": 0},
        "sheet_h": {"type": "number", "exclusiveMinimum": 0},
        "saturation": {"type": "number", "minimum": 0, "maximum": 1},
        # plane / icosphere / mesh
        "width": {"type": "number", "exclusiveMinimum": 0},
        "height": {"type": "number", "exclusiveMinimum": 0},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "subdivisions": {"type": "integer", "minimum": 0, "maximum": 6},
        "shading": {"enum": ["flat", "smooth"]},
        "albedo": _RGB,
        "specular": {"type": "number", "minimum": 0, "maximum": 1},
        "path": {"type": "string"},
        # v_groove
        "length": {"type": "number", "exclusiveMinimum": 0},
        "plate_width": {"type": "number", "exclusiveMinimum": 0},
        "groove_width": {"type": "number", "exclusiveMinimum": 0},
        "groove_depth": {"type": "number", "exclusiveMinimum": 0},
        "bevel_asymmetry": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "face_albedo": _RGB,
        "face_specular": {"type": "number", "minimum": 0, "maximum": 1},
        "plate_albedo": _RGB,
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["camera"],
    "properties": {
        "notes": {"type": "string"},
        "camera": {
            "type": "object",
            "additionalProperties": False,
            "required": ["fx", "fy", "cx", "cy", "width", "height"],
            "properties": {
                "fx": {"type": "number", "exclusiveMinimum": 0},
                "fy": {"type": "number", "exclusiveMinimum": 0},
                "s": {"type": "number"},
                "cx": {"type": "number"},
                "cy": {"type": "number"},
                "width": {"type": "integer", "exclusiveMinimum": 0},
                "height": {"type": "integer", "exclusiveMinimum": 0},
                "pose": _POSE,
                "notes": {"type": "string"},
            },
        },
        "laser": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "placement": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "offset_x": {"type": "number"},
                        "tilt_deg": {"type": "number"},
                    },
                },
                "pose": _POSE,
                "color": _RGB,
                "power_mw": {"type": "number", "exclusiveMinimum": 0},
                "divergence_deg": {"type": "number", "exclusiveMinimum": 0},
                "cone_deg": {"type": "number", "exclusiveMinimum": 0},
                "notes": {"type": "string"},
            },
        },
        "lights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ambient": {"type": "number", "minimum": 0},
                "points": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["position", "intensity"],
                        "properties": {
                            "position": _RGB,
                            "intensity": {"type": "number", "minimum": 0},
                            "color": _RGB,
                        },
                    },
                },
                "notes": {"type": "string"},
            },
        },
        "background": _RGB,
        "objects": {"type": "array", "items": _OBJECT},
        "render": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "spp": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "passes": {
                    "type": "array",
                    "items": {"enum": ["rgb", "depth", "normals", "mask"]},
                },
                "texture_filter": {"enum": ["point", "box"]},
                "aa": {"enum": ["stratified", "centered"]},
                "notes": {"type": "string"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis", "step", "count"],
            "properties": {
                "axis": _RGB,
                "step": {"type": "number"},
                "count": {"type": "integer", "minimum": 1},
                "notes": {"type": "string"},
            },
        },
        "board_poses": {
            "type": "object",
            "additionalProperties": False,
            "required": ["seed", "count"],
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "count": {"type": "integer", "minimum": 1},
                "distance": {
                    "type": "array", "items": {"type": "number"},
                    "minItems": 2, "maxItems": 2,
                },
                "max_tilt_deg": {"type": "number", "minimum": 0, "maximum": 60},
                "max_roll_deg": {"type": "number", "minimum": 0},
                "require_laser_stripe": {"type": "boolean"},
                "notes": {"type": "string"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "formats": {"type": "array", "items": {"enum": ["pfm", "png"]}},
                "notes": {"type": "string"},
            },
        },
    },
}


def validate_config(cfg: dict) -> dict:
    if jsonschema is None:
        raise ConfigError("jsonschema package is required for config validation")
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        loc = "$" + "".join(
            f"[{p!r}]" if isinstance(p, str) else f"[{p}]" for p in e.absolute_path
        )
        raise ConfigError(f"config error at {loc}: {e.message}")
    if "sweep" in cfg and "board_poses" in cfg:
        raise ConfigError("config error at $: sweep and board_poses are exclusive")
    return cfg


def load_config(path) -> dict:
    try:
        cfg = read_json(path)
    except OSError:
        raise
    except ValueError as e:
        raise ConfigError(f"config error: {path}: {e}") from e
    return validate_config(cfg)


def parse_pose(obj: dict | None) -> Pose:
    if not obj:
        return Pose.identity()
    if "rotation" in obj and "rotvec" in obj:
        raise ConfigError("pose: give either rotation or rotvec, not both")
    if "rotation" in obj:
        R = np.array(obj["rotation"], dtype=np.float64).reshape(3, 3)
    elif "rotvec" in obj:
        R = rotation_exp(np.array(obj["rotvec"], dtype=np.float64))
    else:
        R = np.eye(3)
    t = np.array(obj.get("translation", [0.0, 0.0, 0.0]), dtype=np.float64)
    try:
        return Pose(R, t)
    except ValueError as e:
        raise ConfigError(f"pose: {e}") from e


def build_camera(cfg: dict) -> CameraRig:
    c = cfg["camera"]
    intr = Intrinsics(
        fx=c["fx"], fy=c["fy"], s=c.get("s", 0.0),
        cx=c["cx"], cy=c["cy"], width=c["width"], height=c["height"],
    )
    return CameraRig(intr, Distortion(), parse_pose(c.get("pose")))


def build_laser(cfg: dict) -> LaserModel | None:
    lc = cfg.get("laser", {})
    if not lc or not lc.get("enabled", True):
        return None
    if "pose" in lc and "placement" in lc:
        raise ConfigError("laser: give either pose or placement, not both")
    if "pose" in lc:
        pose = parse_pose(lc["pose"])
    else:
        pl = lc.get("placement", {})
        pose = standard_placement(
            offset_x=pl.get("offset_x", 0.2), tilt_deg=pl.get("tilt_deg", 13.0)
        )
    return LaserModel(
        pose_wl=pose,
        color=tuple(lc.get("color", (0.0, 0.2, 1.0))),
        power_mw=lc.get("power_mw", 20.0),
        divergence_angle=np.deg2rad(lc.get("divergence_deg", 0.3)),
        cone_angle=np.deg2rad(lc.get("cone_deg", 45.0)),
    )


def _build_object(obj: dict, base_dir: Path):
    pose = parse_pose(obj.get("pose"))
    kind = obj["type"]
    if kind == "checkerboard":
        spec = CheckerboardSpec(
            inner_cols=obj.get("inner_cols", 12),
            inner_rows=obj.get("inner_rows", 8),
            square_size=obj.get("square_size", 0.025),
            sheet_w=obj.get("sheet_w", 0.4),
            sheet_h=obj.get("sheet_h", 0.3),
            saturation=obj.get("saturation", 0.9),
        )
        mesh, corners = checkerboard_scene(spec, pose)
        return mesh, {"board_spec": spec, "board_pose": pose, "corners_world": corners}
    if kind == "plane":
        mat = Material(
            albedo=tuple(obj.get("albedo", (0.7, 0.7, 0.7))),
            specular_weight=obj.get("specular", 0.0),
        )
        mesh = make_quad(obj.get("width", 1.0), obj.get("height", 1.0), mat)
        return mesh.transformed(pose), {}
    if kind == "icosphere":
        mat = Material(
            albedo=tuple(obj.get("albedo", (0.7, 0.7, 0.7))),
            specular_weight=obj.get("specular", 0.0),
        )
        mesh = make_icosphere(
            subdivisions=obj.get("subdivisions", 2),
            radius=obj.get("radius", 0.05),
            shading=obj.get("shading", "smooth"),
            material=mat,
        )
        return mesh.transformed(pose), {}
    if kind == "v_groove":
        face = Material(
            albedo=tuple(obj.get("face_albedo", (0.35, 0.35, 0.35))),
            specular_weight=obj.get("face_specular", 0.85),
        )
        plate = Material(
            albedo=tuple(obj.get("plate_albedo", (0.55, 0.55, 0.55))),
            specular_weight=0.0,
        )
        mesh = make_v_groove(
            length=obj.get("length", 0.3),
            plate_width=obj.get("plate_width", 0.3),
            groove_width=obj.get("groove_width", 0.04),
            groove_depth=obj.get("groove_depth", 0.03),
            bevel_asymmetry=obj.get("bevel_asymmetry", 0.75),
            face_material=face,
            plate_material=plate,
        )
        return mesh.transformed(pose), {}
    if kind == "mesh":
        mat = Material(
            albedo=tuple(obj.get("albedo", (0.7, 0.7, 0.7))),
            specular_weight=obj.get("specular", 0.0),
        )
        mesh = load_mesh(
            base_dir / obj["path"], material=mat, shading=obj.get("shading", "flat")
        )
        return mesh.transformed(pose), {}
    raise ConfigError(f"unknown object type {kind!r}")


@dataclass
class FrameSetup:
    """Everything needed to render and post-process one frame."""

    index: int
    scene: Scene
    cam_to_world: Pose
    meta: dict = field(default_factory=dict)

    @property
    def ground_truth_plane(self) -> PlaneParams | None:
        return laser_plane(self.scene.laser) if self.scene.laser else None


def build_frames(cfg: dict, base_dir=".") -> list:
    """Expand the config into per-frame scenes (sweep or board-pose set)."""
    base_dir = Path(base_dir)
    rig = build_camera(cfg)
    laser = build_laser(cfg)
    lights = cfg.get("lights", {})
    ambient = lights.get("ambient", 0.0)
    point_lights = [
        PointLight(
            position=np.array(p["position"], dtype=np.float64),
            intensity=p["intensity"],
            color=tuple(p.get("color", (1.0, 1.0, 1.0))),
        )
        for p in lights.get("points", [])
    ]
    background = tuple(cfg.get("background", (0.0, 0.0, 0.0)))

    meshes = []
    meta: dict = {}
    board_obj = None
    for obj in cfg.get("objects", []):
        if obj["type"] == "checkerboard":
            if board_obj is not None:
                raise ConfigError("only one checkerboard object is supported")
            board_obj = obj
            continue
        mesh, m = _build_object(obj, base_dir)
        meshes.append(mesh)
        meta.update(m)

    frames = []
    if "board_poses" in cfg:
        if board_obj is None:
            raise ConfigError("board_poses requires a checkerboard object")
        bp = cfg["board_poses"]
        phi = laser_plane(laser) if (laser and bp.get("require_laser_stripe")) else None
        spec = CheckerboardSpec(
            inner_cols=board_obj.get("inner_cols", 12),
            inner_rows=board_obj.get("inner_rows", 8),
            square_size=board_obj.get("square_size", 0.025),
            sheet_w=board_obj.get("sheet_w", 0.4),
            sheet_h=board_obj.get("sheet_h", 0.3),
            saturation=board_obj.get("saturation", 0.9),
        )
        gen = pose_gen.generate_poses(
            seed=bp["seed"],
            count=bp["count"],
            rig=rig,
            spec=spec,
            distance_range=tuple(bp.get("distance", (0.55, 0.95))),
            max_tilt_deg=bp.get("max_tilt_deg", 40.0),
            max_roll_deg=bp.get("max_roll_deg", 25.0),
            require_laser_plane=phi,
        )
        for k, pose in enumerate(gen):
            board_mesh, corners = checkerboard_scene(spec, pose)
            scene = Scene(
                meshes + [board_mesh], rig, laser,
                ambient_light=ambient, point_lights=point_lights,
                background=background,
            )
            fmeta = dict(meta)
            fmeta.update(
                board_spec=spec, board_pose=pose, corners_world=corners
            )
            frames.append(
                FrameSetup(k, scene, rig.pose_cw.inverse(), fmeta)
            )
        return frames

    if board_obj is not None:
        mesh, m = _build_object(board_obj, base_dir)
        meshes.append(mesh)
        meta.update(m)

    sweep = cfg.get("sweep")
    count = sweep["count"] if sweep else 1
    axis = np.array(sweep["axis"], dtype=np.float64) if sweep else np.zeros(3)
    step = sweep["step"] if sweep else 0.0
    cam_to_world0 = rig.pose_cw.inverse()
    for k in range(count):
        shift = Pose(np.eye(3), k * step * axis)
        cam_to_world = shift.compose(cam_to_world0)
        rig_k = CameraRig(rig.intrinsics, rig.distortion, cam_to_world.inverse())
        laser_k = None
        if laser is not None:
            laser_k = LaserModel(
                pose_wl=shift.compose(laser.pose_wl),
                color=laser.color,
                power_mw=laser.power_mw,
                divergence_angle=laser.divergence_angle,
                cone_angle=laser.cone_angle,
            )
        scene = Scene(
            meshes, rig_k, laser_k,
            ambient_light=ambient, point_lights=point_lights, background=background,
        )
        frames.append(FrameSetup(k, scene, cam_to_world, dict(meta)))
    return frames


def render_settings(cfg: dict) -> dict:
    r = cfg.get("render", {})
    return {
        "spp": r.get("spp", 16),
        "seed": r.get("seed", 0),
        "passes": tuple(r.get("passes", ("rgb", "depth", "normals", "mask"))),
        "texture_filter": r.get("texture_filter", "point"),
        "center_samples": r.get("aa", "stratified") == "centered",
    }
