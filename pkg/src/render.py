# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Deterministic software rasterizer for the observation images.

Every triangle is expanded into its candidate pixels in one vectorized pass, and depth is
resolved with a stable lexicographic sort, so equal depths always favour the triangle
emitted first. Texture coordinates are interpolated affinely in screen space.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from enum import Enum, unique
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np

from mathkin import ArmModel, joint_origins
from randgrasp_config import DistractorShape, RandgraspError
from scene import Camera, Scene

logger = logging.getLogger(__name__)

AMBIENT = 0.35
SHADOW_FACTOR = 0.55
TABLE_EXTENT = ((-0.6, 1.4), (-1.2, 1.2))
WALL_X = -0.6
WALL_EXTENT = ((-2.0, 2.0), (0.0, 2.5))
TABLE_CELLS = 8
WALL_CELLS = 4
MARKER_HALF = 2

LIT, TABLE, WALL = 0, 1, 2

ARM_LINK_WIDTHS = (0.06, 0.06, 0.05, 0.045, 0.04, 0.035)
PEDESTAL_RADIUS = 0.07
FINGER_SIZE = (0.01, 0.025, 0.06)


class BehindCamera(RandgraspError):
    """Point lies behind the camera's near plane."""

    pass


@unique
class Aperture(str, Enum):
    """Gripper finger spacing."""

    open = "open"
    closed = "closed"


FINGER_SPACING = {Aperture.open: 0.05, Aperture.closed: 0.035}


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit RGB image stored row-major as (height, width, 3)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixels shape {pixels.shape} does not match {self.width}x{self.height}"
            )
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    def digest(self) -> str:
        return hashlib.sha256(self.pixels.tobytes()).hexdigest()

    def as_float(self) -> np.ndarray:
        """Pixels scaled to [0, 1]."""
        return self.pixels.astype(float) / 255.0


class PixelProjection(NamedTuple):
    u: float
    v: float
    depth: float


def project_point(camera: Camera, world_point: Sequence[float]) -> PixelProjection:
    """Pinhole projection; pixel centers sit at half-integers."""
    x, y, z = camera.world_to_camera(np.asarray(world_point, dtype=float))
    if z < camera.near:
        raise BehindCamera(f"point at depth {z:.4f} is behind the near plane {camera.near}")
    f = camera.focal
    cx, cy = camera.principal_point
    return PixelProjection(f * x / z + cx, f * y / z + cy, float(z))


# -- meshes ------------------------------------------------------------------------------


@dataclass
class Mesh:
    """Triangle soup with per-triangle material, colour and texture coordinates."""

    vertices: np.ndarray  # (T, 3, 3)
    colors: np.ndarray  # (T, 3)
    material: np.ndarray  # (T,)
    uvs: np.ndarray  # (T, 3, 2)

    @classmethod
    def lit(cls, vertices: np.ndarray, color: Sequence[float]) -> "Mesh":
        count = len(vertices)
        return cls(
            vertices,
            np.broadcast_to(np.asarray(color, dtype=float), (count, 3)).copy(),
            np.full(count, LIT, dtype=np.int8),
            np.zeros((count, 3, 2)),
        )

    @classmethod
    def concatenate(cls, meshes: List["Mesh"]) -> "Mesh":
        if not meshes:
            return cls(
                np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, np.int8), np.zeros((0, 3, 2))
            )
        return cls(
            np.concatenate([m.vertices for m in meshes]),
            np.concatenate([m.colors for m in meshes]),
            np.concatenate([m.material for m in meshes]),
            np.concatenate([m.uvs for m in meshes]),
        )


_BOX_CORNERS = np.array(
    [[x, y, z] for x in (-1.0, 1.0) for y in (-1.0, 1.0) for z in (-1.0, 1.0)]
)
_BOX_FACES = np.array(
    [
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ]
)  # fmt: skip


def box_triangles(
    center: Sequence[float], half_extents: Sequence[float], rotation: Optional[np.ndarray] = None
) -> np.ndarray:
    corners = _BOX_CORNERS * np.asarray(half_extents, dtype=float)
    if rotation is not None:
        corners = corners @ rotation.T
    return (corners + np.asarray(center, dtype=float))[_BOX_FACES]


def cylinder_triangles(
    center: Sequence[float], radius: float, half_height: float, sides: int = 10
) -> np.ndarray:
    angles = np.arange(sides) * (2.0 * math.pi / sides)
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    c = np.asarray(center, dtype=float)
    bottom = np.column_stack([ring, np.full(sides, -half_height)]) + c
    top = np.column_stack([ring, np.full(sides, half_height)]) + c
    nxt = np.roll(np.arange(sides), -1)
    tris = []
    for i, j in zip(range(sides), nxt):
        tris.append([bottom[i], bottom[j], top[j]])
        tris.append([bottom[i], top[j], top[i]])
        tris.append([c + (0, 0, -half_height), bottom[j], bottom[i]])
        tris.append([c + (0, 0, half_height), top[i], top[j]])
    return np.array(tris)


def sphere_triangles(
    center: Sequence[float], radius: float, stacks: int = 5, slices: int = 8
) -> np.ndarray:
    theta = np.linspace(0.0, math.pi, stacks + 1)
    phi = np.linspace(0.0, 2.0 * math.pi, slices + 1)
    pts = np.stack(
        [
            np.outer(np.sin(theta), np.cos(phi)),
            np.outer(np.sin(theta), np.sin(phi)),
            np.outer(np.cos(theta), np.ones_like(phi)),
        ],
        axis=-1,
    ) * radius + np.asarray(center, dtype=float)
    tris = []
    for i in range(stacks):
        for j in range(slices):
            a, b, c, d = pts[i, j], pts[i, j + 1], pts[i + 1, j], pts[i + 1, j + 1]
            if i > 0:
                tris.append([a, b, d])
            if i < stacks - 1:
                tris.append([a, d, c])
    return np.array(tris)


def _frame_along(direction: np.ndarray) -> np.ndarray:
    z = direction / np.linalg.norm(direction)
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    return np.stack([x, np.cross(z, x), z], axis=1)


def _segment_box(a: np.ndarray, b: np.ndarray, width: float) -> np.ndarray:
    length = np.linalg.norm(b - a)
    rotation = _frame_along(b - a) if length > 1e-9 else np.eye(3)
    return box_triangles(0.5 * (a + b), (0.5 * width, 0.5 * width, 0.5 * length), rotation)


def arm_meshes(
    model: ArmModel, angles: np.ndarray, color: Sequence[float], aperture: Aperture
) -> List[Mesh]:
    """Pedestal, one box per link, palm and two fingers."""
    origins, tip = joint_origins(model, angles)
    base = model.base_pose.translation
    meshes = [
        Mesh.lit(
            cylinder_triangles((base[0], base[1], 0.5 * base[2]), PEDESTAL_RADIUS, 0.5 * base[2]),
            color,
        )
    ]
    points = [base, *origins, tip.apply([0.0, 0.0, -FINGER_SIZE[2]])]
    for k, (a, b) in enumerate(zip(points[:-1], points[1:])):
        width = ARM_LINK_WIDTHS[min(k, len(ARM_LINK_WIDTHS) - 1)]
        meshes.append(Mesh.lit(_segment_box(a, b, width), color))

    dark = np.asarray(color, dtype=float) * 0.6
    rot = tip.rotation
    palm_center = tip.apply([0.0, 0.0, -FINGER_SIZE[2] - 0.005])
    meshes.append(Mesh.lit(box_triangles(palm_center, (0.06, 0.02, 0.005), rot), dark))
    spacing = FINGER_SPACING[aperture]
    for sign in (-1.0, 1.0):
        finger = tip.apply([sign * spacing, 0.0, -0.5 * FINGER_SIZE[2] + 0.01])
        meshes.append(
            Mesh.lit(box_triangles(finger, np.asarray(FINGER_SIZE) * 0.5, rot), dark)
        )
    return meshes


def object_meshes(scene: Scene) -> List[Mesh]:
    meshes = []
    if scene.cube is not None:
        cube = scene.cube
        meshes.append(Mesh.lit(box_triangles(cube.position, (cube.half,) * 3), cube.color))
    if scene.basket is not None:
        b = scene.basket
        hx, hy = b.half_extents
        w = 0.5 * b.wall
        hz = 0.5 * b.depth
        x, y, z0 = b.position
        walls = [
            ((x, y, z0 + 0.5 * (b.floor_height - z0)), (hx, hy, 0.5 * (b.floor_height - z0))),
            ((x - hx + w, y, z0 + hz), (w, hy, hz)),
            ((x + hx - w, y, z0 + hz), (w, hy, hz)),
            ((x, y - hy + w, z0 + hz), (hx, w, hz)),
            ((x, y + hy - w, z0 + hz), (hx, w, hz)),
        ]
        meshes.append(
            Mesh.lit(np.concatenate([box_triangles(c, h) for c, h in walls]), b.color)
        )
    for d in scene.distractors:
        half = 0.5 * d.size
        if d.shape is DistractorShape.box:
            tris = box_triangles(d.position, (half, half, half))
        elif d.shape is DistractorShape.sphere:
            tris = sphere_triangles(d.position, half)
        else:
            tris = cylinder_triangles(d.position, half, half)
        meshes.append(Mesh.lit(tris, d.color))
    return meshes


def _grid_quads(corner_fn, cells: int):
    """Triangles and uv of a unit square subdivided into cells x cells."""
    steps = np.linspace(0.0, 1.0, cells + 1)
    tris, uvs = [], []
    for i in range(cells):
        for j in range(cells):
            u0, u1, v0, v1 = steps[i], steps[i + 1], steps[j], steps[j + 1]
            quad = [(u0, v0), (u1, v0), (u1, v1), (u0, v1)]
            for idx in ((0, 1, 2), (0, 2, 3)):
                uv = [quad[k] for k in idx]
                uvs.append(uv)
                tris.append([corner_fn(u, v) for u, v in uv])
    return np.array(tris), np.array(uvs)


def surface_meshes() -> List[Mesh]:
    (x0, x1), (y0, y1) = TABLE_EXTENT
    table, table_uv = _grid_quads(
        lambda u, v: (x0 + u * (x1 - x0), y0 + v * (y1 - y0), 0.0), TABLE_CELLS
    )
    (wy0, wy1), (wz0, wz1) = WALL_EXTENT
    wall, wall_uv = _grid_quads(
        lambda u, v: (WALL_X, wy0 + u * (wy1 - wy0), wz0 + v * (wz1 - wz0)), WALL_CELLS
    )
    return [
        Mesh(table, np.zeros((len(table), 3)), np.full(len(table), TABLE, np.int8), table_uv),
        Mesh(wall, np.zeros((len(wall), 3)), np.full(len(wall), WALL, np.int8), wall_uv),
    ]


# -- rasterization -----------------------------------------------------------------------


class Fragments(NamedTuple):
    triangle: np.ndarray
    pixel: np.ndarray
    weights: np.ndarray  # screen-space barycentrics
    depth: np.ndarray


def _to_screen(camera: Camera, vertices: np.ndarray):
    cam = camera.world_to_camera(vertices.reshape(-1, 3)).reshape(-1, 3, 3)
    z = cam[..., 2]
    keep = np.all(z >= camera.near, axis=1) & np.any(z <= camera.far, axis=1)
    f = camera.focal
    cx, cy = camera.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        screen = np.stack([f * cam[..., 0] / z + cx, f * cam[..., 1] / z + cy], axis=-1)
    return screen, z, keep


def rasterize(screen: np.ndarray, depth: np.ndarray, width: int, height: int) -> Fragments:
    """Every (triangle, pixel) pair whose pixel center lies inside the triangle."""
    empty = Fragments(
        np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0)
    )
    if len(screen) == 0:
        return empty
    px, py = screen[..., 0], screen[..., 1]
    area = (px[:, 1] - px[:, 0]) * (py[:, 2] - py[:, 0]) - (px[:, 2] - px[:, 0]) * (
        py[:, 1] - py[:, 0]
    )
    i0 = np.clip(np.ceil(px.min(axis=1) - 0.5), 0, width).astype(np.int64)
    i1 = np.clip(np.floor(px.max(axis=1) - 0.5), -1, width - 1).astype(np.int64)
    j0 = np.clip(np.ceil(py.min(axis=1) - 0.5), 0, height).astype(np.int64)
    j1 = np.clip(np.floor(py.max(axis=1) - 0.5), -1, height - 1).astype(np.int64)
    nx = np.maximum(i1 - i0 + 1, 0)
    ny = np.maximum(j1 - j0 + 1, 0)
    valid = np.abs(area) > 1e-12
    counts = np.where(valid, nx * ny, 0)
    total = int(counts.sum())
    if total == 0:
        return empty

    tri = np.repeat(np.arange(len(screen)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    ii = i0[tri] + local % nx[tri]
    jj = j0[tri] + local // nx[tri]
    sx = ii + 0.5
    sy = jj + 0.5

    ax, ay = px[tri], py[tri]

    def edge(a, b):
        return (ax[:, b] - ax[:, a]) * (sy - ay[:, a]) - (sx - ax[:, a]) * (ay[:, b] - ay[:, a])

    inv_area = 1.0 / area[tri]
    w0 = edge(1, 2) * inv_area
    w1 = edge(2, 0) * inv_area
    w2 = edge(0, 1) * inv_area
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    weights = np.stack([w0, w1, w2], axis=1)[inside]
    tri = tri[inside]
    z = depth[tri]
    frag_depth = 1.0 / np.sum(weights / z, axis=1)
    return Fragments(tri, (jj * width + ii)[inside], weights, frag_depth)


def resolve_depth(fragments: Fragments) -> np.ndarray:
    """Indices of the nearest fragment per covered pixel; ties keep emission order."""
    if len(fragments.pixel) == 0:
        return np.zeros(0, np.int64)
    order = np.lexsort((fragments.depth, fragments.pixel))
    sorted_pixels = fragments.pixel[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_pixels[1:] != sorted_pixels[:-1]
    return order[first]


def _lit_shade(mesh: Mesh, camera: Camera, light_dir: np.ndarray) -> np.ndarray:
    v = mesh.vertices
    normals = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.where(norms > 0, norms, 1.0)
    to_eye = camera.pose.translation - v.mean(axis=1)
    facing = np.sign(np.sum(normals * to_eye, axis=1))
    normals *= np.where(facing == 0, 1.0, facing)[:, None]
    diffuse = np.maximum(0.0, normals @ -light_dir)
    return AMBIENT + (1.0 - AMBIENT) * diffuse


def _shadow_pixels(
    meshes: List[Mesh], camera: Camera, light_dir: np.ndarray
) -> np.ndarray:
    """Pixels covered by the objects' projection onto the table along the light."""
    if light_dir[2] > -1e-6 or not meshes:
        return np.zeros(0, np.int64)
    vertices = np.concatenate([m.vertices for m in meshes])
    heights = np.maximum(vertices[..., 2], 0.0)
    flat = vertices - (heights / light_dir[2])[..., None] * light_dir
    flat[..., 2] = 1e-4
    screen, z, keep = _to_screen(camera, flat)
    frags = rasterize(screen[keep], z[keep], camera.width, camera.height)
    return np.unique(frags.pixel)


def render(
    scene: Scene,
    arm_angles: Optional[np.ndarray],
    camera: Camera,
    *,
    model: Optional[ArmModel] = None,
    gripper_aperture: Aperture = Aperture.open,
) -> Image:
    """Z-buffered image of the scene with the arm posed at ``arm_angles``."""
    width, height = camera.width, camera.height
    intensity = scene.light.intensity
    light_dir = scene.light.direction / np.linalg.norm(scene.light.direction)

    casters = object_meshes(scene)
    if arm_angles is not None:
        casters += arm_meshes(
            scene.arm_model(model),
            np.asarray(arm_angles, dtype=float),
            scene.arm_color,
            gripper_aperture,
        )
    surfaces = surface_meshes()
    mesh = Mesh.concatenate(surfaces + casters)
    shade = np.ones(len(mesh.vertices))
    lit = mesh.material == LIT
    if np.any(lit):
        lit_mesh = Mesh(mesh.vertices[lit], mesh.colors[lit], mesh.material[lit], mesh.uvs[lit])
        shade[lit] = _lit_shade(lit_mesh, camera, light_dir)

    screen, z, keep = _to_screen(camera, mesh.vertices)
    kept = np.flatnonzero(keep)
    frags = rasterize(screen[kept], z[kept], width, height)
    winners = resolve_depth(frags)
    tri = kept[frags.triangle[winners]]
    pixel = frags.pixel[winners]
    weights = frags.weights[winners]

    clear = scene.background_texture.mean_color * intensity
    out = np.broadcast_to(clear, (height * width, 3)).copy()

    material = mesh.material[tri]
    colors = mesh.colors[tri] * (shade[tri] * intensity)[:, None]
    uv = np.einsum("nk,nkd->nd", weights, mesh.uvs[tri])
    for kind, texture in ((TABLE, scene.table_texture), (WALL, scene.background_texture)):
        sel = material == kind
        if np.any(sel):
            colors[sel] = texture.sample(uv[sel]) * intensity
    out[pixel] = colors

    if scene.shadows_enabled:
        shadowed = _shadow_pixels(casters, camera, light_dir)
        table_pixels = pixel[material == TABLE]
        darken = np.intersect1d(shadowed, table_pixels)
        out[darken] *= SHADOW_FACTOR

    pixels = np.round(np.clip(out, 0.0, 1.0) * 255.0).astype(np.uint8)
    return Image(width, height, pixels.reshape(height, width, 3))


def render_scene(scene: Scene, model: Optional[ArmModel] = None) -> Image:
    """Scene viewed from its own camera with the arm at its start joints."""
    return render(scene, scene.start_joints, scene.camera, model=model)


def overlay_marker(
    img: Image, camera: Camera, world_point: Sequence[float], color: Sequence[float]
) -> Image:
    """Draw a 5x5 cross at the projected point; unchanged when it falls outside the frame."""
    try:
        u, v, _ = project_point(camera, world_point)
    except BehindCamera:
        return img
    ci, cj = int(math.floor(u)), int(math.floor(v))
    if not (0 <= ci < img.width and 0 <= cj < img.height):
        return img
    rgb = np.round(np.clip(np.asarray(color, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)
    pixels = img.pixels.copy()
    for d in range(-MARKER_HALF, MARKER_HALF + 1):
        if 0 <= ci + d < img.width:
            pixels[cj, ci + d] = rgb
        if 0 <= cj + d < img.height:
            pixels[cj + d, ci] = rgb
    return Image(img.width, img.height, pixels)


def write_ppm(image: Image, path: Union[str, Path]) -> None:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.pixels.tobytes())


def read_ppm(path: Union[str, Path]) -> Image:
    data = Path(path).read_bytes()
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    width, height = int(tokens[1]), int(tokens[2])
    pos += 1
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    return Image(width, height, pixels.reshape(height, width, 3))
