"""Reusable command bodies behind the CLI: render, calibrate, extract,
reconstruct, evaluate, scan. The CLI wrapper only parses arguments and maps
exceptions to exit codes; tests drive these functions directly."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..camera import CameraRig, Distortion, Intrinsics, apply_distortion, undistort
from ..errors import ConfigError, LinescanError
from ..extract import ExtractParams, extract_profile, ground_truth_profile
from ..geom import PlaneParams, Pose, transform_plane
from ..laser import laser_plane
from ..recon import (
    PointCloud,
    assemble_scan,
    cloud_from_profile_depth,
    evaluate,
    triangulate,
)
from ..render import render
from ..calib.corners import detect_checkerboard, synthetic_corners
from ..calib.homography import pose_from_homography
from ..calib.planefit import backproject_laser_pixels, fit_laser_plane
from ..calib.zhang import CalibView, zhang_intrinsics
from . import formats
from .config import build_camera, build_frames, load_config, render_settings


def _frame_dir(out_dir: Path, index: int) -> Path:
    return out_dir / f"frame_{index:04d}"


def _pose_from_dict(d: dict) -> Pose:
    return Pose(
        np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
        np.array(d["translation"], dtype=np.float64),
    )


def _write_sidecar(path: Path, frame, settings, laser) -> None:
    intr = frame.scene.camera.intrinsics
    sidecar = {
        "frame": frame.index,
        "seed": settings["seed"],
        "spp": settings["spp"],
        "camera": formats.intrinsics_to_dict(intr),
        "pose_cw": formats.pose_to_dict(frame.scene.camera.pose_cw),
        "cam_to_world": formats.pose_to_dict(frame.cam_to_world),
        "laser": None,
        "phi_gt": None,
        "board": None,
    }
    if laser is not None:
        sidecar["laser"] = {
            "pose_wl": formats.pose_to_dict(laser.pose_wl),
            "color": list(laser.color),
            "power_mw": laser.power_mw,
            "divergence_deg": float(np.rad2deg(laser.divergence_angle)),
            "cone_deg": float(np.rad2deg(laser.cone_angle)),
        }
        sidecar["phi_gt"] = [float(x) for x in laser_plane(laser).as_array()]
    if "board_spec" in frame.meta:
        spec = frame.meta["board_spec"]
        corners_w = frame.meta["corners_world"]
        try:
            from ..camera import project

            corners_px = project(frame.scene.camera, corners_w).tolist()
        except LinescanError:
            corners_px = None
        sidecar["board"] = {
            "inner_cols": spec.inner_cols,
            "inner_rows": spec.inner_rows,
            "square_size": spec.square_size,
            "sheet_w": spec.sheet_w,
            "sheet_h": spec.sheet_h,
            "saturation": spec.saturation,
            "pose": formats.pose_to_dict(frame.meta["board_pose"]),
            "corners_world": np.asarray(corners_w).tolist(),
            "corners_px": corners_px,
        }
    formats.write_json(path, sidecar)


def cmd_render(config_path, out_dir, seed=None, threads=1, passes=None,
               distort=None) -> list:
    """Render every frame of a config; returns the frame directories."""
    cfg = load_config(config_path)
    settings = render_settings(cfg)
    if seed is not None:
        settings["seed"] = seed
    if passes is not None:
        settings["passes"] = tuple(passes)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = build_frames(cfg, base_dir=Path(config_path).parent)
    formats_wanted = cfg.get("output", {}).get("formats", ["pfm", "png"])

    def do_frame(frame):
        fdir = _frame_dir(out_dir, frame.index)
        fdir.mkdir(parents=True, exist_ok=True)
        out = render(
            frame.scene,
            passes=settings["passes"],
            spp=settings["spp"],
            seed=settings["seed"],
            center_samples=settings["center_samples"],
            texture_filter=settings["texture_filter"],
        )
        if "pfm" in formats_wanted:
            if out.rgb is not None:
                formats.write_pfm(fdir / "rgb.pfm", out.rgb)
            if out.depth is not None:
                formats.write_pfm(fdir / "depth.pfm", out.depth)
            if out.normals is not None:
                formats.write_pfm(fdir / "normals.pfm", out.normals)
            if out.mask is not None:
                formats.write_pfm(fdir / "mask.pfm", out.mask)
        if "png" in formats_wanted and out.rgb is not None:
            formats.write_png(fdir / "rgb.png", out.rgb)
        if distort is not None and out.rgb is not None:
            warped = distort_image(
                out.rgb, frame.scene.camera.intrinsics, distort
            )
            formats.write_pfm(fdir / "rgb_distorted.pfm", warped)
        _write_sidecar(fdir / "sidecar.json", frame, settings, frame.scene.laser)
        return fdir

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            dirs = list(pool.map(do_frame, frames))
    else:
        dirs = [do_frame(f) for f in frames]
    return dirs


def distort_image(rgb: np.ndarray, intr: Intrinsics, dist: Distortion) -> np.ndarray:
    """Post-render lens-distortion warp (bilinear resampling).

    The output pixel p samples the ideal image at K undistort(K^-1 p): the
    rendered pinhole image acts as the scene, the warp emulates the lens.
    """
    H, W = rgb.shape[:2]
    uu, vv = np.meshgrid(np.arange(W, dtype=np.float64),
                         np.arange(H, dtype=np.float64))
    Kinv = intr.inverse_matrix()
    pn = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1) @ Kinv.T
    und = undistort(dist, pn[:, :2])
    src_u = intr.fx * und[:, 0] + intr.s * und[:, 1] + intr.cx
    src_v = intr.fy * und[:, 1] + intr.cy
    x0 = np.clip(np.floor(src_u).astype(int), 0, W - 2)
    y0 = np.clip(np.floor(src_v).astype(int), 0, H - 2)
    fx = np.clip(src_u - x0, 0.0, 1.0)[:, None]
    fy = np.clip(src_v - y0, 0.0, 1.0)[:, None]
    img = rgb.reshape(H, W, -1)
    out = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )
    inside = (
        (src_u >= 0) & (src_u <= W - 1) & (src_v >= 0) & (src_v <= H - 1)
    )[:, None]
    return (out * inside).reshape(rgb.shape)


def _load_frame_view(fdir: Path, corners: str, channel: str,
                     noise_sigma: float = 0.0, rng=None):
    """CalibView for one rendered frame directory (detector or sidecar path)."""
    sidecar = formats.read_json(fdir / "sidecar.json")
    board = sidecar.get("board")
    if board is None:
        raise ConfigError(f"{fdir}: frame has no checkerboard metadata")
    spec_grid = _board_grid(board)
    if corners == "detect":
        rgb = formats.read_pfm(fdir / "rgb.pfm")
        px = detect_checkerboard(
            rgb, board["inner_cols"], board["inner_rows"], channel=channel
        )
    else:
        truth = np.array(board["corners_px"], dtype=np.float64)
        px = truth.copy()
        if noise_sigma > 0:
            rng = rng if rng is not None else np.random.default_rng(0)
            px += rng.normal(0.0, noise_sigma, px.shape)
    return CalibView(px, spec_grid), sidecar


def _board_grid(board: dict) -> np.ndarray:
    from ..scene import CheckerboardSpec

    spec = CheckerboardSpec(
        inner_cols=board["inner_cols"],
        inner_rows=board["inner_rows"],
        square_size=board["square_size"],
        sheet_w=board["sheet_w"],
        sheet_h=board["sheet_h"],
        saturation=board["saturation"],
    )
    return spec.corner_grid()


def cmd_calibrate_camera(frames_dir, out_path=None, corners: str = "detect",
                         channel: str = "mean", noise_sigma: float = 0.0,
                         threads: int = 1):
    """Zhang calibration over every frame directory; writes calibration JSON."""
    frame_dirs = sorted(Path(frames_dir).glob("frame_*"))
    if len(frame_dirs) < 3:
        raise ConfigError(f"{frames_dir}: need >= 3 rendered frames")
    rng = np.random.default_rng(0)

    def load(fdir):
        view, sidecar = _load_frame_view(fdir, corners, channel, noise_sigma, rng)
        return view, sidecar

    if threads > 1 and corners == "detect":
        with ThreadPoolExecutor(max_workers=threads) as pool:
            loaded = list(pool.map(load, frame_dirs))
    else:
        loaded = [load(f) for f in frame_dirs]
    views = [v for v, _ in loaded]
    for i, v in enumerate(views):
        v.view_id = i
    cam = loaded[0][1]["camera"]
    cal = zhang_intrinsics(views, cam["width"], cam["height"])
    payload = {
        "intrinsics": formats.intrinsics_to_dict(cal.intrinsics),
        "distortion": {"k1": 0.0, "k2": 0.0, "k3": 0.0, "p1": 0.0, "p2": 0.0},
        "rms_px": cal.rms_px,
        "per_view": [
            {
                "frame": str(frame_dirs[i].name),
                "rms_px": float(cal.per_view_rms[i]),
                "pose": formats.pose_to_dict(cal.poses[i]),
            }
            for i in range(len(views))
        ],
        "true_intrinsics": {
            "fx": cam["fx"], "fy": cam["fy"], "cx": cam["cx"], "cy": cam["cy"],
        },
    }
    if out_path is not None:
        formats.write_json(out_path, payload)
    return cal, payload


def intrinsics_from_calibration(payload: dict) -> Intrinsics:
    d = payload["intrinsics"]
    return Intrinsics(
        fx=d["fx"], fy=d["fy"], s=d["s"], cx=d["cx"], cy=d["cy"],
        width=d["width"], height=d["height"],
    )


def cmd_calibrate_laser(frames_dir, calibration_path=None, out_path=None,
                        corners: str = "detect", board_margin: float = 0.008,
                        params: ExtractParams | None = None, threads: int = 1):
    """Laser-plane calibration from rendered board views with the stripe."""
    frame_dirs = sorted(Path(frames_dir).glob("frame_*"))
    if not frame_dirs:
        raise ConfigError(f"{frames_dir}: no rendered frames")
    params = params or ExtractParams(laser_color="blue")
    if calibration_path is not None:
        K = intrinsics_from_calibration(formats.read_json(calibration_path))
    else:
        cam = formats.read_json(frame_dirs[0] / "sidecar.json")["camera"]
        K = Intrinsics(**cam)

    def per_frame(fdir):
        # corner detection on the laser-free channel keeps the stripe out
        channel = "red" if params.laser_color != "red" else "blue"
        view, sidecar = _load_frame_view(fdir, corners, channel)
        view.fit_homography()
        view.pose = pose_from_homography(view.homography, K)
        rgb = formats.read_pfm(fdir / "rgb.pfm")
        prof = extract_profile(rgb, params)
        rows = np.flatnonzero(prof.valid)
        px = np.column_stack([prof.col[rows], rows.astype(np.float64)])
        board = sidecar["board"]
        hw = board["sheet_w"] / 2.0 - board_margin
        hh = board["sheet_h"] / 2.0 - board_margin
        board_xy = view.homography.apply_inverse(px)
        on_board = (np.abs(board_xy[:, 0]) <= hw) & (np.abs(board_xy[:, 1]) <= hh)
        view.laser_pixels = px[on_board]
        pts = backproject_laser_pixels(view)
        return pts, sidecar

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(per_frame, frame_dirs))
    else:
        results = [per_frame(f) for f in frame_dirs]
    points = np.vstack([pts for pts, _ in results])
    fit = fit_laser_plane(points)
    payload = {
        "phi": [float(x) for x in fit.plane.as_array()],
        "phi_init": [float(x) for x in fit.phi_init],
        "n_points": fit.n_points,
        "mean_abs_distance_m": fit.mean_abs_distance,
        "rms_distance_m": fit.rms_distance,
        "max_abs_distance_m": fit.max_abs_distance,
    }
    phi_gt = results[0][1].get("phi_gt")
    if phi_gt is not None:
        # the fit lives in the camera frame; ground truth is stored in world
        pose_cw = _pose_from_dict(results[0][1]["pose_cw"])
        gt = transform_plane(
            PlaneParams.from_array(np.array(phi_gt)), pose_cw
        ).normalized()
        payload["phi_gt_camera"] = [float(x) for x in gt.as_array()]
        payload["angle_error_mrad"] = fit.angle_to(gt) * 1000.0
    if out_path is not None:
        formats.write_json(out_path, payload)
    return fit, payload


def cmd_extract(image_path, out_path=None, params: ExtractParams | None = None):
    params = params or ExtractParams(laser_color="blue")
    rgb = formats.read_pfm(image_path)
    prof = extract_profile(rgb, params)
    if out_path is not None:
        formats.write_profile_csv(out_path, prof)
    return prof


def cmd_reconstruct(profile_path, calibration_path, plane_path, out_path=None,
                    frame: int = 0):
    prof = formats.read_profile_csv(profile_path)
    K = intrinsics_from_calibration(formats.read_json(calibration_path))
    plane = PlaneParams.from_array(
        np.array(formats.read_json(plane_path)["phi"], dtype=np.float64)
    )
    cloud = triangulate(prof, K, plane, frame=frame)
    if out_path is not None:
        formats.write_ply(out_path, cloud)
    return cloud


def cmd_evaluate(frames_dir, methods=("rgb", "mask", "gt"), out_prefix=None,
                 params: ExtractParams | None = None, plane: PlaneParams | None = None):
    """Three-way depth comparison per frame: rgb / mask triangulation vs
    ground-truth depth, evaluated at the mask's sub-pixel stripe locations."""
    params = params or ExtractParams(laser_color="blue")
    frame_dirs = sorted(Path(frames_dir).glob("frame_*"))
    if not frame_dirs:
        raise ConfigError(f"{frames_dir}: no rendered frames")
    rows_csv = [("frame", "row", "method", "z_est", "z_true", "dz")]
    reports = {}
    clouds = {m: [] for m in methods}
    truths = []
    for fi, fdir in enumerate(frame_dirs):
        sidecar = formats.read_json(fdir / "sidecar.json")
        cam = sidecar["camera"]
        K = Intrinsics(**cam)
        frame_plane = plane
        if frame_plane is None:
            if sidecar.get("phi_gt") is None:
                raise ConfigError(f"{fdir}: no laser plane available")
            frame_plane = PlaneParams.from_array(np.array(sidecar["phi_gt"]))
        # triangulation runs in the camera frame; planes are stored in world
        pose_cw = _pose_from_dict(sidecar["pose_cw"])
        frame_plane = transform_plane(frame_plane, pose_cw)
        mask = formats.read_pfm(fdir / "mask.pfm")
        depth = formats.read_pfm(fdir / "depth.pfm")
        gt_prof, gt_depth = ground_truth_profile(mask, depth, params)
        truth = cloud_from_profile_depth(gt_prof, gt_depth, K, frame=fi)
        truths.append(truth)
        if "rgb" in methods:
            rgb = formats.read_pfm(fdir / "rgb.pfm")
            prof = extract_profile(rgb, params)
            clouds["rgb"].append(triangulate(prof, K, frame_plane, frame=fi))
        if "mask" in methods:
            clouds["mask"].append(triangulate(gt_prof, K, frame_plane, frame=fi))
        if "gt" in methods:
            clouds["gt"].append(truth)
    truth_all = _concat_clouds(truths)
    for m in methods:
        est = _concat_clouds(clouds[m])
        rep = evaluate(est, truth_all)
        reports[m] = rep
        for k in range(rep.n):
            rows_csv.append(
                (
                    int(rep.frames[k]), int(rep.rows[k]), m,
                    f"{rep.z_est[k]:.9g}", f"{rep.z_true[k]:.9g}",
                    f"{rep.dz[k]:.9g}",
                )
            )
    if out_prefix is not None:
        out_prefix = Path(out_prefix)
        payload = {m: reports[m].to_dict() for m in methods}
        formats.write_json(out_prefix.with_suffix(".json"), payload)
        import csv as _csv

        with open(out_prefix.with_suffix(".csv"), "w", newline="") as f:
            _csv.writer(f).writerows(rows_csv)
    return reports


def _concat_clouds(clouds) -> PointCloud:
    return PointCloud(
        points=np.vstack([c.points for c in clouds]),
        frames=np.concatenate([c.frames for c in clouds]),
        rows=np.concatenate([c.rows for c in clouds]),
        valid=np.concatenate([c.valid for c in clouds]),
        flags=np.concatenate([c.flags for c in clouds]),
        frame_tag=clouds[0].frame_tag,
    )


def cmd_scan(config_path, out_path=None, threads: int = 1, workdir=None,
             params: ExtractParams | None = None,
             plane: PlaneParams | None = None):
    """render -> extract -> triangulate -> assemble in one pass (in memory)."""
    cfg = load_config(config_path)
    settings = render_settings(cfg)
    params = params or ExtractParams(laser_color="blue")
    frames = build_frames(cfg, base_dir=Path(config_path).parent)

    def per_frame(frame):
        out = render(
            frame.scene,
            passes=("rgb",),
            spp=settings["spp"],
            seed=settings["seed"],
            center_samples=settings["center_samples"],
            texture_filter=settings["texture_filter"],
        )
        prof = extract_profile(out.rgb, params)
        frame_plane = plane if plane is not None else frame.ground_truth_plane
        if frame_plane is None:
            raise ConfigError("scan needs a laser (or an explicit plane)")
        frame_plane = transform_plane(frame_plane, frame.scene.camera.pose_cw)
        K = frame.scene.camera.intrinsics
        cloud = triangulate(prof, K, frame_plane, frame=frame.index)
        return cloud, frame.cam_to_world

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(per_frame, frames))
    else:
        parts = [per_frame(f) for f in frames]
    assembled = assemble_scan(parts)
    if out_path is not None:
        formats.write_ply(out_path, assembled)
    return assembled
