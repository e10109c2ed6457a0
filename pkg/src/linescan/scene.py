"""Scene description and ray-intersection queries.

Triangle meshes with per-triangle materials, a procedural checkerboard
calibration target, procedural test objects (plane, icosphere, V-groove), and
both brute-force and BVH-accelerated nearest-hit queries. The two query paths
return bit-identical results (nearest t, ties broken by lower global triangle
index), which regression tests rely on.

Scenes and acceleration structures are immutable after construction and safe
to query from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraRig
from .geom import Line3, Pose
from .laser import LaserModel

T_MIN = 1e-6  # nearest-hit cutoff, meters


@dataclass(frozen=True)
class CheckerTexture:
    """Procedural checkerboard albedo, evaluated analytically in UV space.

    UV coordinates are board-frame meters. Squares outside the pattern
    rectangle take the border (sheet) color.
    """

    square_size: float
    pattern_cols: int  # number of squares across
    pattern_rows: int
    light: tuple = (0.9, 0.9, 0.9)
    dark: tuple = (0.09, 0.09, 0.09)

    @property
    def x0(self) -> float:
        return -0.5 * self.pattern_cols * self.square_size

    @property
    def y0(self) -> float:
        return -0.5 * self.pattern_rows * self.square_size

    def albedo(self, u, v):
        """Pointwise albedo at UV arrays; returns (..., 3)."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        s = self.square_size
        i = np.floor((u - self.x0) / s)
        j = np.floor((v - self.y0) / s)
        inside = (
            (i >= 0) & (i < self.pattern_cols) & (j >= 0) & (j < self.pattern_rows)
        )
        dark = ((i + j) % 2) == 0
        light_rgb = np.asarray(self.light)
        dark_rgb = np.asarray(self.dark)
        out = np.broadcast_to(light_rgb, u.shape + (3,)).copy()
        out[inside & dark] = dark_rgb
        return out

    def albedo_box(self, u, v, hu, hv):
        """Box-filtered albedo over the rectangle [u-hu, u+hu] x [v-hv, v+hv].

        The checker parity (-1)^(floor(x)+floor(y)) factorizes, so the mean
        over an axis-aligned rectangle is a product of two closed-form 1-D
        integrals of the square wave. Only exact inside the pattern; near the
        pattern border it blends with the sheet color by coverage in u and v
        separately, which is adequate because calibration corners are interior.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        hu = np.maximum(np.asarray(hu, dtype=np.float64), 1e-12)
        hv = np.maximum(np.asarray(hv, dtype=np.float64), 1e-12)
        s = self.square_size
        su = _square_wave_mean((u - self.x0) / s - 0.0, hu / s)
        sv = _square_wave_mean((v - self.y0) / s - 0.0, hv / s)
        light_rgb = np.asarray(self.light)
        dark_rgb = np.asarray(self.dark)
        mid = 0.5 * (light_rgb + dark_rgb)
        amp = 0.5 * (light_rgb - dark_rgb)
        # parity even (dark) at su*sv = +1 -> albedo = mid - amp * su * sv
        checker = mid[None, :] - amp[None, :] * (su * sv).reshape(-1, 1)
        checker = checker.reshape(u.shape + (3,))
        # blend with border color by coverage of the pattern rectangle
        cov_u = _interval_coverage(u, hu, self.x0, self.x0 + self.pattern_cols * s)
        cov_v = _interval_coverage(v, hv, self.y0, self.y0 + self.pattern_rows * s)
        cov = (cov_u * cov_v)[..., None]
        return cov * checker + (1.0 - cov) * light_rgb


def _square_wave_mean(x, h):
    """Mean of (-1)^floor(t) over [x-h, x+h]; from the triangle-wave antiderivative."""
    return (_sq_antideriv(x + h) - _sq_antideriv(x - h)) / (2.0 * h)


def _sq_antideriv(x):
    """Antiderivative of (-1)^floor(x): a periodic triangle wave."""
    k = np.floor(x)
    frac = x - k
    even = (k % 2) == 0
    return np.where(even, frac, 1.0 - frac)


def _interval_coverage(x, h, lo, hi):
    """Fraction of [x-h, x+h] inside [lo, hi]."""
    left = np.maximum(x - h, lo)
    right = np.minimum(x + h, hi)
    return np.clip(right - left, 0.0, None) / (2.0 * h)


@dataclass(frozen=True)
class Material:
    """Surface response: albedo (solid color or procedural texture) + gloss."""

    albedo: tuple = (0.8, 0.8, 0.8)
    specular_weight: float = 0.0
    roughness: float = 0.0
    texture: CheckerTexture | None = None

    def __post_init__(self):
        if not 0.0 <= self.specular_weight <= 1.0:
            raise ValueError("specular_weight must be in [0, 1]")
        if not 0.0 <= self.roughness <= 1.0:
            raise ValueError("roughness must be in [0, 1]")
        object.__setattr__(self, "albedo", tuple(float(c) for c in self.albedo))


class TriMesh:
    """Indexed triangle mesh with per-triangle materials.

    shading='smooth' interpolates per-vertex normals (area-weighted face
    normal average unless explicit normals are given); geometry queries always
    also report the true face normal.
    """

    def __init__(
        self,
        vertices,
        triangles,
        materials=None,
        material_ids=None,
        shading="flat",
        vertex_normals=None,
        vertex_uv=None,
    ):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle index out of range")
        self.materials = tuple(materials) if materials else (Material(),)
        if material_ids is None:
            self.material_ids = np.zeros(len(self.triangles), dtype=np.int64)
        else:
            self.material_ids = np.asarray(material_ids, dtype=np.int64)
        if self.material_ids.size and self.material_ids.max() >= len(self.materials):
            raise ValueError("material id out of range")
        if shading not in ("flat", "smooth"):
            raise ValueError("shading must be 'flat' or 'smooth'")
        self.shading = shading
        self.vertex_uv = (
            None if vertex_uv is None else np.asarray(vertex_uv, dtype=np.float64)
        )

        v0 = self.vertices[self.triangles[:, 0]]
        e1 = self.vertices[self.triangles[:, 1]] - v0
        e2 = self.vertices[self.triangles[:, 2]] - v0
        cross = np.cross(e1, e2)
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        if np.any(areas <= 1e-12):
            raise ValueError("degenerate triangle (area <= 1e-12 m^2)")
        self.face_normals = cross / (2.0 * areas[:, None])

        if vertex_normals is not None:
            self.vertex_normals = np.asarray(vertex_normals, dtype=np.float64)
        elif shading == "smooth":
            vn = np.zeros_like(self.vertices)
            np.add.at(vn, self.triangles[:, 0], cross)
            np.add.at(vn, self.triangles[:, 1], cross)
            np.add.at(vn, self.triangles[:, 2], cross)
            norms = np.linalg.norm(vn, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            self.vertex_normals = vn / norms
        else:
            self.vertex_normals = None

    def transformed(self, pose: Pose) -> "TriMesh":
        """Rigidly transformed copy."""
        vn = None
        if self.vertex_normals is not None:
            vn = self.vertex_normals @ pose.R.T
        return TriMesh(
            pose.apply(self.vertices),
            self.triangles,
            materials=self.materials,
            material_ids=self.material_ids,
            shading=self.shading,
            vertex_normals=vn,
            vertex_uv=self.vertex_uv,
        )


@dataclass(frozen=True)
class CheckerboardSpec:
    """Planar calibration target: inner corner grid + sheet dimensions (meters)."""

    inner_cols: int = 12
    inner_rows: int = 8
    square_size: float = 0.025
    sheet_w: float = 0.4
    sheet_h: float = 0.3
    saturation: float = 0.9

    def __post_init__(self):
        if self.inner_cols < 2 or self.inner_rows < 2:
            raise ValueError("need at least a 2x2 inner corner grid")
        if not 0.0 <= self.saturation <= 1.0:
            raise ValueError("saturation must be in [0, 1]")
        if (
            self.sheet_w < (self.inner_cols + 1) * self.square_size
            or self.sheet_h < (self.inner_rows + 1) * self.square_size
        ):
            raise ValueError("sheet too small to contain the pattern")

    @property
    def pattern_cols(self) -> int:
        return self.inner_cols + 1

    @property
    def pattern_rows(self) -> int:
        return self.inner_rows + 1

    def corner_grid(self) -> np.ndarray:
        """Inner corners in board frame (z = 0), row-major, shape (rows*cols, 2)."""
        s = self.square_size
        xs = (np.arange(self.inner_cols) - (self.inner_cols - 1) / 2.0) * s
        ys = (np.arange(self.inner_rows) - (self.inner_rows - 1) / 2.0) * s
        gx, gy = np.meshgrid(xs, ys)  # row-major: y (rows) outer
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


def checkerboard_scene(spec: CheckerboardSpec, board_pose: Pose):
    """Textured board quad + world coordinates of the inner corners.

    Returns (TriMesh, corners). Corners are row-major on the board's z = 0
    plane, transformed by board_pose.
    """
    white = 0.9
    dark = white * (1.0 - spec.saturation)
    tex = CheckerTexture(
        square_size=spec.square_size,
        pattern_cols=spec.pattern_cols,
        pattern_rows=spec.pattern_rows,
        light=(white, white, white),
        dark=(dark, dark, dark),
    )
    mat = Material(albedo=(white, white, white), texture=tex)
    hw, hh = spec.sheet_w / 2.0, spec.sheet_h / 2.0
    verts = np.array(
        [[-hw, -hh, 0.0], [hw, -hh, 0.0], [hw, hh, 0.0], [-hw, hh, 0.0]]
    )
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    uv = verts[:, :2].copy()
    mesh = TriMesh(verts, tris, materials=[mat], vertex_uv=uv).transformed(board_pose)
    grid = spec.corner_grid()
    corners = board_pose.apply(
        np.hstack([grid, np.zeros((len(grid), 1))])
    )
    return mesh, corners


def make_quad(width: float, height: float, material: Material | None = None) -> TriMesh:
    """Axis-aligned quad in the z = 0 plane, centered at the origin."""
    hw, hh = width / 2.0, height / 2.0
    verts = np.array(
        [[-hw, -hh, 0.0], [hw, -hh, 0.0], [hw, hh, 0.0], [-hw, hh, 0.0]]
    )
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    mats = [material] if material is not None else None
    return TriMesh(verts, tris, materials=mats)


def make_icosphere(subdivisions: int = 2, radius: float = 1.0,
                   shading: str = "smooth", material: Material | None = None) -> TriMesh:
    """Subdivided icosahedron; 20 * 4^n faces."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.array(verts[i]) + np.array(verts[j])
                m /= np.linalg.norm(m)
                verts.append(tuple(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius
    mats = [material] if material is not None else None
    return TriMesh(v, np.array(faces), materials=mats, shading=shading)


def make_v_groove(
    length: float = 0.3,
    plate_width: float = 0.3,
    groove_width: float = 0.04,
    groove_depth: float = 0.03,
    bevel_asymmetry: float = 0.75,
    face_material: Material | None = None,
    plate_material: Material | None = None,
) -> TriMesh:
    """Open V-groove prism: flat plate with a V-channel cut along the x-axis.

    The channel cross-section in the y-z plane dips from z = 0 down to
    z = groove_depth (away from a camera looking along +z at the face).
    bevel_asymmetry in (0, 1) places the root off-center for a single-bevel
    look. Groove faces take face_material (glossy by default) so laser light
    mirror-bounces between them.
    """
    if not 0.0 < bevel_asymmetry < 1.0:
        raise ValueError("bevel_asymmetry must be in (0, 1)")
    if face_material is None:
        face_material = Material(albedo=(0.35, 0.35, 0.35), specular_weight=0.85)
    if plate_material is None:
        plate_material = Material(albedo=(0.55, 0.55, 0.55), specular_weight=0.0)
    hx = length / 2.0
    hw = plate_width / 2.0
    g = groove_width / 2.0
    root_y = (bevel_asymmetry - 0.5) * groove_width
    profile = [  # (y, z) polyline of the cross-section
        (-hw, 0.0),
        (-g, 0.0),
        (root_y, groove_depth),
        (g, 0.0),
        (hw, 0.0),
    ]
    seg_mats = [1, 0, 0, 1]  # 0 = groove face, 1 = plate
    verts = []
    for y, z in profile:
        verts.append([-hx, y, z])
        verts.append([hx, y, z])
    tris = []
    mat_ids = []
    for k in range(len(profile) - 1):
        a, b = 2 * k, 2 * k + 1  # near/far of segment start
        c, d = 2 * k + 2, 2 * k + 3  # near/far of segment end
        tris += [[a, b, d], [a, d, c]]
        mat_ids += [seg_mats[k], seg_mats[k]]
    return TriMesh(
        np.array(verts, dtype=np.float64),
        np.array(tris),
        materials=[face_material, plate_material],
        material_ids=np.array(mat_ids),
    )


@dataclass(frozen=True)
class PointLight:
    position: np.ndarray
    intensity: float
    color: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=np.float64)
        )
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))


class Scene:
    """One camera, one laser, meshes, and simple lighting.

    Triangle data from all meshes is flattened into contiguous arrays at
    construction; global triangle indices (mesh order, then local order)
    define the deterministic intersection tie-break.
    """

    def __init__(
        self,
        meshes,
        camera: CameraRig,
        laser: LaserModel | None,
        ambient_light: float = 0.0,
        point_lights=(),
        background=(0.0, 0.0, 0.0),
    ):
        self.meshes = list(meshes)
        self.camera = camera
        self.laser = laser
        self.ambient_light = float(ambient_light)
        self.point_lights = list(point_lights)
        self.background = tuple(float(c) for c in background)
        self._accel = None
        self._flatten()

    def _flatten(self):
        v0s, e1s, e2s, fns = [], [], [], []
        corner_normals, corner_uvs = [], []
        albedo, spec, tex_ids, mesh_ids = [], [], [], []
        self.textures = []
        self._tri_material = []
        for mi, mesh in enumerate(self.meshes):
            self._tri_material.extend(mesh.materials[m] for m in mesh.material_ids)
            t = mesh.triangles
            p0 = mesh.vertices[t[:, 0]]
            v0s.append(p0)
            e1s.append(mesh.vertices[t[:, 1]] - p0)
            e2s.append(mesh.vertices[t[:, 2]] - p0)
            fns.append(mesh.face_normals)
            if mesh.shading == "smooth" and mesh.vertex_normals is not None:
                corner_normals.append(mesh.vertex_normals[t])
            else:
                corner_normals.append(
                    np.repeat(mesh.face_normals[:, None, :], 3, axis=1)
                )
            if mesh.vertex_uv is not None:
                corner_uvs.append(mesh.vertex_uv[t])
            else:
                corner_uvs.append(np.zeros((len(t), 3, 2)))
            tex_of_mat = []
            for mat in mesh.materials:
                if mat.texture is None:
                    tex_of_mat.append(-1)
                else:
                    self.textures.append(mat.texture)
                    tex_of_mat.append(len(self.textures) - 1)
            mat_albedo = np.array([m.albedo for m in mesh.materials])
            mat_spec = np.array([m.specular_weight for m in mesh.materials])
            mat_tex = np.array(tex_of_mat, dtype=np.int64)
            albedo.append(mat_albedo[mesh.material_ids])
            spec.append(mat_spec[mesh.material_ids])
            tex_ids.append(mat_tex[mesh.material_ids])
            mesh_ids.append(np.full(len(t), mi, dtype=np.int64))
        if self.meshes:
            self.tri_v0 = np.vstack(v0s)
            self.tri_e1 = np.vstack(e1s)
            self.tri_e2 = np.vstack(e2s)
            self.tri_normal = np.vstack(fns)
            self.tri_corner_normals = np.vstack(corner_normals)
            self.tri_corner_uv = np.vstack(corner_uvs)
            self.tri_albedo = np.vstack(albedo)
            self.tri_specular = np.concatenate(spec)
            self.tri_texture = np.concatenate(tex_ids)
            self.tri_mesh = np.concatenate(mesh_ids)
        else:
            self.tri_v0 = np.zeros((0, 3))
            self.tri_e1 = np.zeros((0, 3))
            self.tri_e2 = np.zeros((0, 3))
            self.tri_normal = np.zeros((0, 3))
            self.tri_corner_normals = np.zeros((0, 3, 3))
            self.tri_corner_uv = np.zeros((0, 3, 2))
            self.tri_albedo = np.zeros((0, 3))
            self.tri_specular = np.zeros(0)
            self.tri_texture = np.zeros(0, dtype=np.int64)
            self.tri_mesh = np.zeros(0, dtype=np.int64)

    @property
    def n_triangles(self) -> int:
        return len(self.tri_v0)

    def material_of(self, tri_idx: int) -> Material:
        return self._tri_material[tri_idx]


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    geometric_normal: np.ndarray
    shading_normal: np.ndarray
    material: Material
    tri_index: int
    bary: tuple


def intersect_batch(scene: Scene, origins: np.ndarray, dirs: np.ndarray,
                    t_min: float = T_MIN, t_max: float = np.inf,
                    tri_chunk: int = 256):
    """Nearest hit for a batch of rays against every triangle (vectorized).

    origins/dirs are (R, 3). Returns (t, tri_idx, bu, bv): t = +inf and
    tri_idx = -1 where the ray misses. Ties on t go to the lower triangle
    index (chunks scan in ascending order, comparisons strict).
    """
    R = origins.shape[0]
    best_t = np.full(R, np.inf)
    best_idx = np.full(R, -1, dtype=np.int64)
    best_u = np.zeros(R)
    best_v = np.zeros(R)
    T = scene.n_triangles
    for start in range(0, T, tri_chunk):
        stop = min(start + tri_chunk, T)
        v0 = scene.tri_v0[start:stop]
        e1 = scene.tri_e1[start:stop]
        e2 = scene.tri_e2[start:stop]
        # Moller-Trumbore, broadcast rays (R, 1, 3) against triangles (1, C, 3)
        pvec = np.cross(dirs[:, None, :], e2[None, :, :])
        det = np.einsum("rcj,cj->rc", pvec, e1)
        near_parallel = np.abs(det) < 1e-300
        inv_det = np.where(near_parallel, 0.0, 1.0 / np.where(near_parallel, 1.0, det))
        tvec = origins[:, None, :] - v0[None, :, :]
        u = np.einsum("rcj,rcj->rc", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("rcj,rj->rc", qvec, dirs) * inv_det
        t = np.einsum("rcj,cj->rc", qvec, e2) * inv_det
        ok = (
            (~near_parallel)
            & (u >= 0.0)
            & (v >= 0.0)
            & (u + v <= 1.0)
            & (t > t_min)
            & (t < t_max)
        )
        t = np.where(ok, t, np.inf)
        ci = np.argmin(t, axis=1)
        rows = np.arange(R)
        tc = t[rows, ci]
        better = tc < best_t
        best_t[better] = tc[better]
        best_idx[better] = ci[better] + start
        best_u[better] = u[rows, ci][better]
        best_v[better] = v[rows, ci][better]
    return best_t, best_idx, best_u, best_v


def occluded_batch(scene: Scene, origins: np.ndarray, targets: np.ndarray,
                   eps: float = 1e-6) -> np.ndarray:
    """Segment visibility test: True where something blocks origin -> target."""
    d = targets - origins
    t, idx, _, _ = intersect_batch(scene, origins, d, t_min=eps, t_max=1.0 - eps)
    return idx >= 0


class BVH:
    """Binary AABB tree over the scene's global triangle list.

    Median split on the centroid's widest axis. Per-ray traversal matches the
    brute-force result exactly: same inclusive triangle test, same t cutoff,
    ties resolved to the lower global triangle index.
    """

    LEAF_SIZE = 4

    def __init__(self, scene: Scene):
        self.scene = scene
        T = scene.n_triangles
        v0 = scene.tri_v0
        v1 = v0 + scene.tri_e1
        v2 = v0 + scene.tri_e2
        self.tri_lo = np.minimum(np.minimum(v0, v1), v2)
        self.tri_hi = np.maximum(np.maximum(v0, v1), v2)
        cent = (self.tri_lo + self.tri_hi) / 2.0
        self.nodes = []  # (lo, hi, left, right, start, count)
        self.order = np.arange(T)
        if T:
            self._build(0, T, cent)

    def _build(self, start, stop, cent) -> int:
        idx = self.order[start:stop]
        lo = self.tri_lo[idx].min(axis=0)
        hi = self.tri_hi[idx].max(axis=0)
        node_id = len(self.nodes)
        self.nodes.append([lo, hi, -1, -1, start, stop - start])
        if stop - start <= self.LEAF_SIZE:
            return node_id
        axis = int(np.argmax(hi - lo))
        mid = (start + stop) // 2
        c = cent[self.order[start:stop], axis]
        part = np.argsort(c, kind="stable")
        self.order[start:stop] = self.order[start:stop][part]
        left = self._build(start, mid, cent)
        right = self._build(mid, stop, cent)
        self.nodes[node_id][2] = left
        self.nodes[node_id][3] = right
        return node_id

    def intersect(self, origin: np.ndarray, direction: np.ndarray,
                  t_min: float = T_MIN, t_max: float = np.inf):
        """Nearest hit of one ray: (t, tri_idx, bu, bv); tri_idx = -1 on miss."""
        if not self.nodes:
            return np.inf, -1, 0.0, 0.0
        inv_d = np.where(direction != 0.0, 1.0 / np.where(direction == 0.0, 1.0, direction), np.inf)
        best = (np.inf, -1, 0.0, 0.0)
        stack = [0]
        scene = self.scene
        while stack:
            node = self.nodes[stack.pop()]
            lo, hi, left, right, start, count = node
            t0 = (lo - origin) * inv_d
            t1 = (hi - origin) * inv_d
            tnear = np.max(np.minimum(t0, t1))
            tfar = np.min(np.maximum(t0, t1))
            limit = best[0] if best[0] < t_max else t_max
            if tnear > tfar or tfar < t_min or tnear > limit:
                continue
            if left < 0:
                for k in self.order[start : start + count]:
                    t, u, v = _tri_hit(
                        origin, direction,
                        scene.tri_v0[k], scene.tri_e1[k], scene.tri_e2[k],
                        t_min, t_max,
                    )
                    if t < best[0] or (t == best[0] and t < np.inf and k < best[1]):
                        best = (t, int(k), u, v)
            else:
                stack.append(right)
                stack.append(left)
        return best


def _tri_hit(o, d, v0, e1, e2, t_min, t_max):
    pvec = np.cross(d, e2)
    det = float(e1 @ pvec)
    if abs(det) < 1e-300:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    tvec = o - v0
    u = float(tvec @ pvec) * inv
    if u < 0.0:
        return np.inf, 0.0, 0.0
    qvec = np.cross(tvec, e1)
    v = float(d @ qvec) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf, 0.0, 0.0
    t = float(e2 @ qvec) * inv
    if t <= t_min or t >= t_max:
        return np.inf, 0.0, 0.0
    return t, u, v


def build_accel(scene: Scene) -> BVH:
    """Build (and attach) the BVH for a scene."""
    accel = BVH(scene)
    scene._accel = accel
    return accel


def intersect_ray(scene: Scene, ray: Line3):
    """Nearest-hit query for a single ray; returns Hit or None on miss.

    Goes through the scene's acceleration structure when one has been built,
    otherwise brute force; both paths give identical results.
    """
    if np.linalg.norm(ray.v) == 0.0:
        raise ValueError("ray direction must be nonzero")
    if scene._accel is not None:
        t, idx, u, v = scene._accel.intersect(ray.l0, ray.v)
    else:
        tb, idxb, ub, vb = intersect_batch(
            scene, ray.l0[None, :], ray.v[None, :]
        )
        t, idx, u, v = tb[0], int(idxb[0]), ub[0], vb[0]
    if idx < 0:
        return None
    point = ray.l0 + t * ray.v
    gnormal = scene.tri_normal[idx].copy()
    if float(gnormal @ ray.v) > 0.0:
        gnormal = -gnormal
    w = 1.0 - u - v
    sn = (
        w * scene.tri_corner_normals[idx, 0]
        + u * scene.tri_corner_normals[idx, 1]
        + v * scene.tri_corner_normals[idx, 2]
    )
    nrm = np.linalg.norm(sn)
    sn = sn / nrm if nrm > 0 else gnormal
    if float(sn @ ray.v) > 0.0:
        sn = -sn
    return Hit(
        t=float(t),
        point=point,
        geometric_normal=gnormal,
        shading_normal=sn,
        material=scene.material_of(int(idx)),
        tri_index=int(idx),
        bary=(float(u), float(v)),
    )


def save_mesh(path, mesh: TriMesh):
    """Write the OFF-style ASCII format: counts header, vertex lines, face lines."""
    with open(path, "w") as f:
        f.write("OFF\n")
        f.write(f"{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for v in mesh.vertices:
            f.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def load_mesh(path, material: Material | None = None, shading: str = "flat") -> TriMesh:
    """Read the OFF-style ASCII format written by save_mesh."""
    with open(path) as f:
        tokens = []
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens:
        raise ValueError(f"{path}: empty mesh file")
    pos = 0
    if tokens[0] == "OFF":
        pos = 1
    nv, nt = int(tokens[pos]), int(tokens[pos + 1])
    pos += 3  # skip edge count
    verts = np.array(tokens[pos : pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
    pos += 3 * nv
    tris = []
    for _ in range(nt):
        k = int(tokens[pos])
        if k != 3:
            raise ValueError(f"{path}: only triangle faces supported, got {k}-gon")
        tris.append([int(tokens[pos + 1]), int(tokens[pos + 2]), int(tokens[pos + 3])])
        pos += 1 + k
    mats = [material] if material is not None else None
    return TriMesh(verts, np.array(tris), materials=mats, shading=shading)
