"""Deterministic multi-pass ray caster.

Produces the laser-lit RGB image plus exact ground-truth passes:

* rgb     - linear, anti-aliased (spp stratified jittered samples, box filter)
* depth   - camera-frame z-distance of the first hit (NOT Euclidean ray
            length), +inf on miss; point-sampled at pixel centers
* normals - camera-frame unit geometric normals, zero on miss
* mask    - laser irradiance before albedo (material independent), occlusion
            and cone tested; values below 1e-6 of the image peak are exact 0

Determinism contract: every sample position derives from a counter-based hash
of (seed, pixel index, sample index), so output is byte-identical for a fixed
seed regardless of tiling or thread count, and ground-truth passes do not
depend on the seed at all.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scene import Scene, intersect_batch, occluded_batch

MASK_FLOOR_REL = 1e-6

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + _SM_GAMMA).astype(np.uint64)
    x = (x ^ (x >> np.uint64(30))) * _SM_M1
    x = (x ^ (x >> np.uint64(27))) * _SM_M2
    return x ^ (x >> np.uint64(31))


def sample_jitter(seed: int, pix_index: np.ndarray, sample: int, spp: int):
    """Stratified jitter offsets in [-0.5, 0.5)^2 for one sample index.

    Pure function of (seed, pixel, sample): the per-pixel RNG stream mandated
    by the determinism contract.
    """
    base = _splitmix64(np.full_like(pix_index, np.uint64(seed), dtype=np.uint64))
    h = _splitmix64(base ^ pix_index.astype(np.uint64))
    hu = _splitmix64(h ^ np.uint64(2 * sample + 1))
    hv = _splitmix64(h ^ np.uint64(2 * sample + 2))
    u01 = hu.astype(np.float64) / 2.0**64
    v01 = hv.astype(np.float64) / 2.0**64
    n = int(np.floor(np.sqrt(spp)))
    if n * n == spp and n > 0:
        sx, sy = sample % n, sample // n
        ju = (sx + u01) / n - 0.5
        jv = (sy + v01) / n - 0.5
    else:
        ju, jv = u01 - 0.5, v01 - 0.5
    return ju, jv


@dataclass
class RenderOutput:
    """Aligned multi-pass image set; unselected passes are None."""

    rgb: np.ndarray | None
    depth: np.ndarray | None
    normals: np.ndarray | None
    mask: np.ndarray | None

    @property
    def width(self) -> int:
        for a in (self.rgb, self.depth, self.normals, self.mask):
            if a is not None:
                return a.shape[1]
        return 0

    @property
    def height(self) -> int:
        for a in (self.rgb, self.depth, self.normals, self.mask):
            if a is not None:
                return a.shape[0]
        return 0


class _SpecularGroup:
    """Coplanar glossy triangles acting as one mirror for the laser bounce."""

    def __init__(self, normal, offset, tri_idx, weight):
        self.normal = normal  # unit, canonical sign
        self.offset = offset  # plane: n . p + offset = 0
        self.tri_idx = np.asarray(tri_idx, dtype=np.int64)
        self.weight = float(weight)


def _specular_groups(scene: Scene):
    """Group specular triangles by (plane, weight); one virtual laser each."""
    groups: dict = {}
    for k in range(scene.n_triangles):
        w = scene.tri_specular[k]
        if w <= 0.0:
            continue
        n = scene.tri_normal[k].copy()
        d = -float(n @ scene.tri_v0[k])
        # canonical sign: first nonzero component positive
        for comp in n:
            if abs(comp) > 1e-12:
                if comp < 0:
                    n, d = -n, -d
                break
        key = (round(n[0], 9), round(n[1], 9), round(n[2], 9), round(d, 9), round(w, 9))
        groups.setdefault(key, []).append(k)
    out = []
    for (nx, ny, nz, d, w), idx in sorted(groups.items()):
        out.append(_SpecularGroup(np.array([nx, ny, nz]), d, idx, w))
    return out


def _laser_irradiance_points(scene: Scene, points, normals, origin, rot_wl,
                             model, shadow_test=True):
    """Scalar laser irradiance E at surface points (vectorized).

    E = power_scale * gaussian(x_p) * cone(y_p) / r^2 * max(0, cos_inc),
    zeroed where the laser is occluded. `normals` must be unit and oriented
    toward the viewer; back-lit points receive zero.
    """
    w = points - origin
    r2 = np.einsum("ij,ij->i", w, w)
    d_local = w @ rot_wl  # = R_wl.T applied to rows
    out = np.zeros(len(points))
    front = d_local[:, 2] < 0.0
    if not np.any(front):
        return out
    az = np.abs(d_local[front, 2])
    x_p = d_local[front, 0] / az
    y_p = d_local[front, 1] / az
    e0 = model.intensity_profile(x_p, y_p)
    r = np.sqrt(r2[front])
    cos_inc = -np.einsum("ij,ij->i", w[front] / r[:, None], normals[front])
    e = e0 * np.maximum(cos_inc, 0.0) / r2[front]
    if shadow_test and np.any(e > 0.0):
        lit_rows = np.flatnonzero(front)[e > 0.0]
        occ = occluded_batch(
            scene,
            points[lit_rows],
            np.broadcast_to(origin, (len(lit_rows), 3)),
        )
        keep = e > 0.0
        e[keep] = np.where(occ, 0.0, e[keep])
    out[front] = e
    return out


def laser_irradiance(scene: Scene, point, normal, model=None):
    """Laser irradiance at one surface point (shadow-tested)."""
    model = model if model is not None else scene.laser
    if model is None:
        return 0.0
    e = _laser_irradiance_points(
        scene,
        np.asarray(point, dtype=np.float64)[None, :],
        np.asarray(normal, dtype=np.float64)[None, :],
        model.origin,
        model.pose_wl.R,
        model,
    )
    return float(e[0])


def _segment_param_hits(origins, targets, v0, e1, e2, lo=1e-9, hi=1.0 - 1e-9):
    """Per-ray nearest param t in (lo, hi) of segments against a small tri set."""
    d = targets - origins
    pvec = np.cross(d[:, None, :], e2[None, :, :])
    det = np.einsum("rcj,cj->rc", pvec, e1)
    bad = np.abs(det) < 1e-300
    inv = np.where(bad, 0.0, 1.0 / np.where(bad, 1.0, det))
    tvec = origins[:, None, :] - v0[None, :, :]
    u = np.einsum("rcj,rcj->rc", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None, :, :])
    v = np.einsum("rcj,rj->rc", qvec, d) * inv
    t = np.einsum("rcj,cj->rc", qvec, e2) * inv
    ok = (~bad) & (u >= 0) & (v >= 0) & (u + v <= 1.0) & (t > lo) & (t < hi)
    t = np.where(ok, t, np.inf)
    return t.min(axis=1)


def specular_bounce(scene: Scene, points, normals, model, groups=None,
                    exclude_tri=None):
    """Laser light reaching `points` via one mirror reflection (vectorized).

    For each coplanar glossy group the laser is reflected across the plane
    (virtual source); a point receives light when the virtual ray crosses the
    actual mirror polygon and both legs of the real path are unoccluded.
    Returns the scalar irradiance sum, already weighted by the mirror's
    specular weight.
    """
    if groups is None:
        groups = _specular_groups(scene)
    total = np.zeros(len(points))
    if not groups or model is None:
        return total
    o = model.origin
    for g in groups:
        n, d = g.normal, g.offset
        dist_o = float(n @ o) + d
        if abs(dist_o) < 1e-12:
            continue  # laser lies in the mirror plane
        o_virt = o - 2.0 * dist_o * n
        M = np.eye(3) - 2.0 * np.outer(n, n)
        r_virt = M @ model.pose_wl.R
        e = _laser_irradiance_points(
            scene, points, normals, o_virt, r_virt, model, shadow_test=False
        )
        if exclude_tri is not None:
            on_mirror = np.isin(exclude_tri, g.tri_idx)
            e[on_mirror] = 0.0
        live = e > 0.0
        if not np.any(live):
            continue
        rows = np.flatnonzero(live)
        p_live = points[rows]
        ov = np.broadcast_to(o_virt, p_live.shape)
        # the virtual ray must pass through the actual mirror polygon
        tq = _segment_param_hits(
            ov, p_live,
            scene.tri_v0[g.tri_idx], scene.tri_e1[g.tri_idx], scene.tri_e2[g.tri_idx],
        )
        crosses = np.isfinite(tq)
        q = ov + tq[:, None] * (p_live - ov)
        ok = crosses.copy()
        if np.any(crosses):
            c = np.flatnonzero(crosses)
            # leg 1: laser -> mirror point, leg 2: mirror point -> surface
            occ1 = occluded_batch(scene, np.broadcast_to(o, (len(c), 3)), q[c])
            occ2 = occluded_batch(scene, q[c], p_live[c])
            ok[c] = ~(occ1 | occ2)
        keep = np.zeros(len(points), dtype=bool)
        keep[rows[ok]] = True
        total[keep] += g.weight * e[keep]
    return total


def render(scene: Scene, passes=("rgb", "depth", "normals", "mask"),
           spp: int = 16, seed: int = 0, center_samples: bool = False,
           texture_filter: str = "point", threads: int = 1) -> RenderOutput:
    """Render the selected passes.

    spp applies to the RGB pass only; ground-truth passes are exact point
    samples through pixel centers. texture_filter='box' evaluates procedural
    textures as an analytic box integral over the pixel footprint (noise-free
    interior edges, used by calibration configs); 'point' is pointwise.
    """
    intr = scene.camera.intrinsics
    W, H = intr.width, intr.height
    if W <= 0 or H <= 0:
        raise ConfigError("zero-size image")
    if spp < 1:
        raise ConfigError("spp must be >= 1")
    if texture_filter not in ("point", "box"):
        raise ConfigError(f"unknown texture_filter {texture_filter!r}")

    want_rgb = "rgb" in passes
    want_depth = "depth" in passes
    want_normals = "normals" in passes
    want_mask = "mask" in passes
    rgb = np.zeros((H, W, 3)) if want_rgb else None
    depth = np.full((H, W), np.inf) if want_depth else None
    normals = np.zeros((H, W, 3)) if want_normals else None
    mask = np.zeros((H, W)) if want_mask else None

    cam_pose = scene.camera.pose_cw
    R_wc = cam_pose.R.T
    cam_origin = -R_wc @ cam_pose.t
    Kinv = intr.inverse_matrix()
    groups = _specular_groups(scene) if want_rgb else []

    rows_per_tile = max(1, int(2_000_000 // max(W * spp, 1)))
    tiles = [(r0, min(r0 + rows_per_tile, H)) for r0 in range(0, H, rows_per_tile)]

    def run_tile(bounds):
        r0, r1 = bounds
        _render_tile(
            scene, r0, r1, W, spp, seed, center_samples, texture_filter,
            cam_origin, R_wc, Kinv, groups,
            rgb, depth, normals, mask,
            want_rgb, want_depth, want_normals, want_mask,
        )

    if threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_tile, tiles))
    else:
        for tile in tiles:
            run_tile(tile)

    if want_mask:
        peak = mask.max()
        if peak > 0.0:
            mask[mask < MASK_FLOOR_REL * peak] = 0.0
    return RenderOutput(rgb=rgb, depth=depth, normals=normals, mask=mask)


def _render_tile(scene, r0, r1, W, spp, seed, center_samples, texture_filter,
                 cam_origin, R_wc, Kinv, groups,
                 rgb, depth, normals, mask,
                 want_rgb, want_depth, want_normals, want_mask):
    H_tile = r1 - r0
    vv, uu = np.meshgrid(np.arange(r0, r1, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    uu = uu.ravel()
    vv = vv.ravel()
    n_pix = uu.size
    origins = np.broadcast_to(cam_origin, (n_pix, 3))

    if want_depth or want_normals or want_mask:
        dirs_cam = np.stack([uu, vv, np.ones(n_pix)], axis=1) @ Kinv.T
        dirs_world = dirs_cam @ R_wc.T
        t, idx, _, _ = intersect_batch(scene, origins, dirs_world)
        hit = idx >= 0
        if want_depth:
            # K is upper triangular with unit last row, so camera z == t
            depth[r0:r1] = t.reshape(H_tile, W)
        if np.any(hit):
            hidx = idx[hit]
            pts = origins[hit] + t[hit, None] * dirs_world[hit]
            gn = scene.tri_normal[hidx].copy()
            flip = np.einsum("ij,ij->i", gn, dirs_world[hit]) > 0.0
            gn[flip] = -gn[flip]
            if want_normals:
                ncam = gn @ R_wc  # camera frame: R_cw @ n
                buf = np.zeros((n_pix, 3))
                buf[hit] = ncam
                normals[r0:r1] = buf.reshape(H_tile, W, 3)
            if want_mask and scene.laser is not None:
                e = _laser_irradiance_points(
                    scene, pts, gn,
                    scene.laser.origin, scene.laser.pose_wl.R, scene.laser,
                )
                buf = np.zeros(n_pix)
                buf[hit] = e
                mask[r0:r1] = buf.reshape(H_tile, W)

    if not want_rgb:
        return
    pix_index = (vv * W + uu).astype(np.uint64)
    acc = np.zeros((n_pix, 3))
    for s in range(spp):
        if center_samples:
            ju = np.zeros(n_pix)
            jv = np.zeros(n_pix)
        else:
            ju, jv = sample_jitter(seed, pix_index, s, spp)
        dirs_cam = np.stack([uu + ju, vv + jv, np.ones(n_pix)], axis=1) @ Kinv.T
        dirs_world = dirs_cam @ R_wc.T
        t, idx, bu, bv = intersect_batch(scene, origins, dirs_world)
        hit = idx >= 0
        color = np.tile(np.asarray(scene.background), (n_pix, 1))
        if np.any(hit):
            hidx = idx[hit]
            pts = origins[hit] + t[hit, None] * dirs_world[hit]
            albedo = _sample_albedo(
                scene, hidx, bu[hit], bv[hit], uu[hit], vv[hit],
                texture_filter, cam_origin, R_wc, Kinv,
            )
            sn = _shading_normals(scene, hidx, bu[hit], bv[hit], dirs_world[hit])
            radiance = np.full((hit.sum(), 3), scene.ambient_light)
            for light in scene.point_lights:
                radiance += _point_light_term(scene, pts, sn, light)
            if scene.laser is not None:
                e = _laser_irradiance_points(
                    scene, pts, sn,
                    scene.laser.origin, scene.laser.pose_wl.R, scene.laser,
                )
                if groups:
                    e = e + specular_bounce(
                        scene, pts, sn, scene.laser, groups, exclude_tri=hidx
                    )
                radiance += e[:, None] * np.asarray(scene.laser.color)
            color[hit] = albedo * radiance
        acc += color
    rgb[r0:r1] = (acc / spp).reshape(H_tile, W, 3)


def _shading_normals(scene, hidx, bu, bv, dirs):
    bw = 1.0 - bu - bv
    cn = scene.tri_corner_normals[hidx]
    sn = bw[:, None] * cn[:, 0] + bu[:, None] * cn[:, 1] + bv[:, None] * cn[:, 2]
    nrm = np.linalg.norm(sn, axis=1, keepdims=True)
    nrm[nrm == 0.0] = 1.0
    sn /= nrm
    flip = np.einsum("ij,ij->i", sn, dirs) > 0.0
    sn[flip] = -sn[flip]
    return sn


def _point_light_term(scene, pts, normals, light):
    w = light.position - pts
    r2 = np.einsum("ij,ij->i", w, w)
    r = np.sqrt(r2)
    cos_inc = np.einsum("ij,ij->i", w / r[:, None], normals)
    vis = ~occluded_batch(scene, pts, np.broadcast_to(light.position, pts.shape))
    e = light.intensity * np.maximum(cos_inc, 0.0) / r2 * vis
    return e[:, None] * np.asarray(light.color)


def _sample_albedo(scene, hidx, bu, bv, uu, vv, texture_filter,
                   cam_origin, R_wc, Kinv):
    albedo = scene.tri_albedo[hidx].copy()
    tex_ids = scene.tri_texture[hidx]
    for tid in np.unique(tex_ids):
        if tid < 0:
            continue
        tex = scene.textures[tid]
        rows = np.flatnonzero(tex_ids == tid)
        k = hidx[rows]
        cuv = scene.tri_corner_uv[k]
        bw = 1.0 - bu[rows] - bv[rows]
        uv = (
            bw[:, None] * cuv[:, 0]
            + bu[rows, None] * cuv[:, 1]
            + bv[rows, None] * cuv[:, 2]
        )
        if texture_filter == "point":
            albedo[rows] = tex.albedo(uv[:, 0], uv[:, 1])
        else:
            hu, hv_ = _uv_footprint(scene, k, uu[rows], vv[rows],
                                    cam_origin, R_wc, Kinv)
            uvc = _plane_uv(scene, k, uu[rows], vv[rows], cam_origin, R_wc, Kinv)
            albedo[rows] = tex.albedo_box(uvc[:, 0], uvc[:, 1], hu, hv_)
    return albedo


def _plane_point(scene, k, u_px, v_px, cam_origin, R_wc, Kinv):
    """Intersect pixel rays with each hit triangle's supporting plane."""
    n = scene.tri_normal[k]
    d = np.stack([u_px, v_px, np.ones_like(u_px)], axis=1) @ Kinv.T @ R_wc.T
    denom = np.einsum("ij,ij->i", n, d)
    num = np.einsum("ij,ij->i", n, scene.tri_v0[k] - cam_origin)
    t = num / denom
    return cam_origin + t[:, None] * d


def _tri_uv_affine(scene, k):
    """Per-triangle affine map world point -> UV (on the triangle's plane)."""
    e1 = scene.tri_e1[k]
    e2 = scene.tri_e2[k]
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12 * g12
    cuv = scene.tri_corner_uv[k]
    duv1 = cuv[:, 1] - cuv[:, 0]
    duv2 = cuv[:, 2] - cuv[:, 0]
    return e1, e2, g11, g12, g22, det, cuv[:, 0], duv1, duv2


def _uv_of_points(aff, k_scene_v0, pts):
    e1, e2, g11, g12, g22, det, uv0, duv1, duv2 = aff
    w = pts - k_scene_v0
    a = np.einsum("ij,ij->i", w, e1)
    b = np.einsum("ij,ij->i", w, e2)
    alpha = (g22 * a - g12 * b) / det
    beta = (g11 * b - g12 * a) / det
    return uv0 + alpha[:, None] * duv1 + beta[:, None] * duv2


def _plane_uv(scene, k, u_px, v_px, cam_origin, R_wc, Kinv):
    pts = _plane_point(scene, k, u_px, v_px, cam_origin, R_wc, Kinv)
    return _uv_of_points(_tri_uv_affine(scene, k), scene.tri_v0[k], pts)


def _uv_footprint(scene, k, u_px, v_px, cam_origin, R_wc, Kinv):
    """Half-extents of the pixel footprint in UV space (conservative bbox)."""
    aff = _tri_uv_affine(scene, k)
    v0 = scene.tri_v0[k]
    uv_c = _uv_of_points(aff, v0, _plane_point(scene, k, u_px, v_px, cam_origin, R_wc, Kinv))
    uv_du = _uv_of_points(aff, v0, _plane_point(scene, k, u_px + 0.5, v_px, cam_origin, R_wc, Kinv))
    uv_dv = _uv_of_points(aff, v0, _plane_point(scene, k, u_px, v_px + 0.5, cam_origin, R_wc, Kinv))
    hu = np.abs(uv_du[:, 0] - uv_c[:, 0]) + np.abs(uv_dv[:, 0] - uv_c[:, 0])
    hv = np.abs(uv_du[:, 1] - uv_c[:, 1]) + np.abs(uv_dv[:, 1] - uv_c[:, 1])
    return hu, hv
