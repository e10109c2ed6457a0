"""File formats: PFM float images, PNG previews, ASCII PLY clouds, CSV profiles.

PFM is written bit-exactly: header "PF\\n{width} {height}\\n-1.0\\n" (or "Pf"
for grayscale), then 32-bit little-endian floats, rows bottom-to-top. The
byte-determinism acceptance check diffs these files directly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..extract import LaserProfile
from ..recon import PointCloud


def write_pfm(path, image: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float image as PFM (little-endian)."""
    img = np.asarray(image)
    if img.ndim == 2:
        header = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM wants (H, W) or (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    data = np.flipud(img).astype("<f4")
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file written by write_pfm (returns float64, rows top-down)."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(tok) for tok in f.readline().split())
        scale = float(f.readline())
        count = w * h * (3 if header == b"PF" else 1)
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(count * 4), dtype=dtype).astype(np.float64)
    if header == b"PF":
        img = data.reshape(h, w, 3)
    else:
        img = data.reshape(h, w)
    return np.flipud(img).copy()


def write_png(path, rgb: np.ndarray, gamma: float = 2.2) -> None:
    """8-bit preview: fixed gamma, clamped. Not part of the data contract."""
    from PIL import Image

    img = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    img = np.power(img, 1.0 / gamma)
    arr = (img * 255.0 + 0.5).astype(np.uint8)
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path)
    else:
        Image.fromarray(arr, mode="RGB").save(path)


def write_ply(path, cloud: PointCloud, include_invalid: bool = False) -> None:
    """ASCII PLY, float64 coordinates written with 9 significant digits."""
    pts = cloud.points if include_invalid else cloud.valid_points()
    with open(path, "w") as f:
        f.write("ply\n")
        f.write("format ascii 1.0\n")
        f.write(f"comment frame_tag {cloud.frame_tag}\n")
        f.write(f"element vertex {len(pts)}\n")
        f.write("property double x\n")
        f.write("property double y\n")
        f.write("property double z\n")
        f.write("end_header\n")
        for p in pts:
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def read_ply_points(path) -> np.ndarray:
    """Read vertex x y z from an ASCII PLY written by write_ply."""
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n = 0
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            if line.strip() == "end_header":
                break
        pts = np.loadtxt(f, max_rows=n, dtype=np.float64) if n else np.zeros((0, 3))
    return pts.reshape(-1, 3)


def write_profile_csv(path, profile: LaserProfile) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "col", "amplitude", "sigma", "valid", "reason"])
        for r in range(len(profile.col)):
            w.writerow(
                [
                    r,
                    f"{profile.col[r]:.6f}" if np.isfinite(profile.col[r]) else "nan",
                    f"{profile.amplitude[r]:.9g}",
                    f"{profile.width_sigma[r]:.6f}",
                    int(profile.valid[r]),
                    profile.reason[r],
                ]
            )


def read_profile_csv(path) -> LaserProfile:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append(rec)
    n = len(rows)
    prof = LaserProfile.empty(n)
    for rec in rows:
        r = int(rec["row"])
        prof.col[r] = float(rec["col"])
        prof.amplitude[r] = float(rec["amplitude"])
        prof.width_sigma[r] = float(rec["sigma"])
        prof.valid[r] = rec["valid"] == "1"
        prof.reason[r] = rec["reason"]
    return prof


def profile_to_dict(profile: LaserProfile) -> dict:
    return {
        "rows": [
            {
                "row": int(r),
                "col": float(profile.col[r]) if np.isfinite(profile.col[r]) else None,
                "amplitude": float(profile.amplitude[r]),
                "sigma": float(profile.width_sigma[r]),
                "valid": bool(profile.valid[r]),
                "reason": str(profile.reason[r]),
            }
            for r in range(len(profile.col))
        ]
    }


def write_json(path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def pose_to_dict(pose) -> dict:
    return {
        "rotation": [float(x) for x in np.asarray(pose.R).ravel()],
        "translation": [float(x) for x in np.asarray(pose.t)],
    }


def intrinsics_to_dict(K) -> dict:
    return {
        "fx": K.fx,
        "fy": K.fy,
        "s": K.s,
        "cx": K.cx,
        "cy": K.cy,
        "width": K.width,
        "height": K.height,
    }
