# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""World model and every domain-randomisation sampler, including procedural textures."""

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from mathkin import ArmModel, Transform, reference_arm
from randgrasp_config import (
    REAL_WORLD_ARM,
    REAL_WORLD_BACKGROUND,
    REAL_WORLD_BASKET,
    REAL_WORLD_CUBE,
    REAL_WORLD_TABLE,
    AblationSwitches,
    BasketSide,
    ColorDistribution,
    ColorRange,
    CompositionFunction,
    DistractorShape,
    RandgraspError,
    RandomisationConfig,
    TextureParams,
    dump_document,
    load_document,
)

logger = logging.getLogger(__name__)

TABLE_HEIGHT = 0.0
BASKET_WALL = 0.01
BASKET_FLOOR = 0.01
ARM_BASE_CLEARANCE = 0.12
"""Distractors keep this far from the arm base axis."""
PLACEMENT_ATTEMPTS = 100
CAMERA_NEAR = 0.05
CAMERA_FAR = 10.0

TEXTURE_STREAM = 0x7E47
SCENE_STREAM = 0x5CE0

ABLATION_SWITCHES = (
    "full",
    "no_distractors",
    "no_textures",
    "no_moving_cam",
    "no_shadows",
    "baseline",
)


class PlacementFailure(RandgraspError):
    """No non-overlapping position was found for a distractor."""

    pass


class UnknownSwitch(RandgraspError):
    """Ablation switch name is not recognised."""

    pass


def _vector(values, size: int) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(size)
    arr.setflags(write=False)
    return arr


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; ``pose`` maps camera coordinates (x right, y down, z forward) to world."""

    pose: Transform
    fov_y: float
    width: int
    height: int
    near: float = CAMERA_NEAR
    far: float = CAMERA_FAR

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ValueError(f"invalid clip planes near={self.near} far={self.far}")
        if not 0 < self.fov_y < math.pi:
            raise ValueError(f"fov_y {self.fov_y} outside (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be positive")

    @property
    def focal(self) -> float:
        """Focal length in pixels."""
        return 0.5 * self.height / math.tan(0.5 * self.fov_y)

    @property
    def principal_point(self) -> Tuple[float, float]:
        return (0.5 * self.width, 0.5 * self.height)

    @classmethod
    def look_at(
        cls,
        eye: Sequence[float],
        target: Sequence[float],
        fov_y: float,
        width: int,
        height: int,
        up: Sequence[float] = (0.0, 0.0, 1.0),
    ) -> "Camera":
        eye = np.asarray(eye, dtype=float)
        forward = _unit(np.asarray(target, dtype=float) - eye)
        right = _unit(np.cross(forward, up))
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward], axis=1)
        return cls(Transform(rotation, eye), fov_y, width, height)

    def moved_to(self, eye: Sequence[float]) -> "Camera":
        """Same orientation and intrinsics, new position."""
        return dataclasses.replace(self, pose=Transform(self.pose.rotation, eye))

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.pose.translation) @ self.pose.rotation


@dataclass(frozen=True, eq=False)
class Cube:
    position: np.ndarray
    """Cube center; it rests at z = edge / 2 on the table."""
    edge: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vector(self.position, 3))
        object.__setattr__(self, "color", _vector(self.color, 3))

    @property
    def half(self) -> float:
        return 0.5 * self.edge

    @property
    def footprint_radius(self) -> float:
        return self.half * math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class Basket:
    """Open-top box; ``position`` is the center of its footprint on the table."""

    position: np.ndarray
    half_extents: np.ndarray
    depth: float
    color: np.ndarray
    side: BasketSide = BasketSide.left
    wall: float = BASKET_WALL

    def __post_init__(self):
        object.__setattr__(self, "position", _vector(self.position, 3))
        object.__setattr__(self, "half_extents", _vector(self.half_extents, 2))
        object.__setattr__(self, "color", _vector(self.color, 3))

    @property
    def interior_half_extents(self) -> np.ndarray:
        return self.half_extents - self.wall

    @property
    def floor_height(self) -> float:
        return float(self.position[2]) + BASKET_FLOOR

    @property
    def rim_height(self) -> float:
        return float(self.position[2]) + self.depth

    @property
    def opening_center(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.rim_height])

    def inside_interior_xy(self, xy: np.ndarray) -> bool:
        offset = np.abs(np.asarray(xy[:2]) - self.position[:2])
        return bool(np.all(offset <= self.interior_half_extents))

    def inside_footprint_xy(self, xy: np.ndarray, margin: float = 0.0) -> bool:
        offset = np.abs(np.asarray(xy[:2]) - self.position[:2])
        return bool(np.all(offset <= self.half_extents + margin))

    def contains(self, point: np.ndarray, half_size: float = 0.0) -> bool:
        """Whether a cube of half edge ``half_size`` centred at ``point`` lies in the interior."""
        point = np.asarray(point, dtype=float)
        offset = np.abs(point[:2] - self.position[:2])
        return bool(
            np.all(offset + half_size <= self.interior_half_extents + 1e-9)
            and point[2] - half_size >= self.floor_height - 1e-9
            and point[2] - half_size <= self.rim_height
        )


@dataclass(frozen=True, eq=False)
class Distractor:
    """Primitive resting on the table; ``position`` is its center."""

    shape: DistractorShape
    position: np.ndarray
    size: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vector(self.position, 3))
        object.__setattr__(self, "color", _vector(self.color, 3))

    @property
    def footprint_radius(self) -> float:
        if self.shape is DistractorShape.box:
            return 0.5 * self.size * math.sqrt(2.0)
        return 0.5 * self.size

    @property
    def top_height(self) -> float:
        return float(self.position[2]) + 0.5 * self.size

    def covers_xy(self, xy: np.ndarray) -> bool:
        offset = np.asarray(xy[:2]) - self.position[:2]
        if self.shape is DistractorShape.box:
            return bool(np.all(np.abs(offset) <= 0.5 * self.size))
        return bool(np.hypot(*offset) <= 0.5 * self.size)


@dataclass(frozen=True, eq=False)
class Light:
    direction: np.ndarray
    """Unit vector the light travels along."""
    intensity: float

    def __post_init__(self):
        object.__setattr__(self, "direction", _vector(self.direction, 3))


@dataclass(frozen=True, eq=False)
class TextureMap:
    """Square RGB texture tiled once over its surface."""

    resolution: int
    pixels: np.ndarray
    seed: int

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.uint8)
        if pixels.shape != (self.resolution, self.resolution, 3):
            raise ValueError(f"texture pixels have shape {pixels.shape}")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def uniform(cls, color: Sequence[float], resolution: int = 16) -> "TextureMap":
        rgb = np.round(np.clip(np.asarray(color, dtype=float), 0.0, 1.0) * 255.0)
        return cls(resolution, np.broadcast_to(rgb, (resolution, resolution, 3)), seed=0)

    def sample(self, uv: np.ndarray) -> np.ndarray:
        """Nearest-texel colours in [0, 1] for (N, 2) texture coordinates."""
        idx = np.clip(np.floor(uv * self.resolution).astype(np.int64), 0, self.resolution - 1)
        return self.pixels[idx[:, 1], idx[:, 0]].astype(float) / 255.0

    @property
    def mean_color(self) -> np.ndarray:
        return self.pixels.reshape(-1, 3).mean(axis=0) / 255.0


@dataclass(frozen=True, eq=False)
class Scene:
    """Everything needed to render and script one episode."""

    cube: Optional[Cube]
    basket: Optional[Basket]
    arm_base_height: float
    start_joints: np.ndarray
    camera: Camera
    light: Light
    distractors: Tuple[Distractor, ...]
    table_texture: TextureMap
    background_texture: TextureMap
    shadows_enabled: bool
    arm_color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start_joints", _vector(self.start_joints, 6))
        object.__setattr__(self, "arm_color", _vector(self.arm_color, 3))
        object.__setattr__(self, "distractors", tuple(self.distractors))

    def with_cube_position(self, position: np.ndarray) -> "Scene":
        if self.cube is None:
            return self
        return dataclasses.replace(self, cube=dataclasses.replace(self.cube, position=position))

    def arm_model(self, model: Optional[ArmModel] = None) -> ArmModel:
        """The arm placed at this scene's base height."""
        return (model or reference_arm()).with_base_height(self.arm_base_height)

    def fingerprint(self) -> str:
        """SHA-256 over a canonical byte serialization."""
        digest = hashlib.sha256()

        def put(*values):
            for value in values:
                if isinstance(value, np.ndarray):
                    digest.update(value.tobytes())
                else:
                    digest.update(repr(value).encode())

        if self.cube is not None:
            put("cube", self.cube.position, self.cube.edge, self.cube.color)
        if self.basket is not None:
            b = self.basket
            put("basket", b.position, b.half_extents, b.depth, b.color, b.side.value, b.wall)
        put(self.arm_base_height, self.start_joints, self.arm_color, self.shadows_enabled)
        c = self.camera
        put("camera", c.pose.rotation, c.pose.translation, c.fov_y, c.width, c.height)
        put(c.near, c.far, "light", self.light.direction, self.light.intensity)
        for d in self.distractors:
            put("distractor", d.shape.value, d.position, d.size, d.color)
        for texture in (self.table_texture, self.background_texture):
            put("texture", texture.resolution, texture.seed, texture.pixels)
        return digest.hexdigest()


# -- gradient noise ----------------------------------------------------------------------

_GRADIENTS = np.array(
    [[math.cos(a), math.sin(a)] for a in np.arange(8) * (2.0 * math.pi / 8.0)]
)


@lru_cache(maxsize=512)
def _permutation(seed: int, octave: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(octave,)))
    perm = rng.permutation(256)
    table = np.concatenate([perm, perm])
    table.setflags(write=False)
    return table


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def gradient_noise(x: np.ndarray, y: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Single-octave 2D gradient noise; zero on integer lattice points."""
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    xi = x0.astype(np.int64) & 255
    yi = y0.astype(np.int64) & 255

    def corner(ix, iy, dx, dy):
        g = _GRADIENTS[perm[perm[ix] + iy] & 7]
        return g[..., 0] * dx + g[..., 1] * dy

    n00 = corner(xi, yi, fx, fy)
    n10 = corner(xi + 1, yi, fx - 1.0, fy)
    n01 = corner(xi, yi + 1, fx, fy - 1.0)
    n11 = corner(xi + 1, yi + 1, fx - 1.0, fy - 1.0)
    u = _fade(fx)
    v = _fade(fy)
    bottom = n00 + u * (n10 - n00)
    top = n01 + u * (n11 - n01)
    return bottom + v * (top - bottom)


def _octaves(x, y, seed: int, octaves: int, base_freq: float):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    amplitude = 1.0
    freq = base_freq
    for octave in range(octaves):
        yield amplitude, gradient_noise(x * freq, y * freq, _permutation(seed, octave))
        amplitude *= 0.5
        freq *= 2.0


def perlin(x, y, seed: int, octaves: int = 1, base_freq: float = 1.0):
    """Fractal gradient noise normalized to [-1, 1]; accepts scalars or arrays."""
    if octaves < 1:
        raise ValueError("octaves must be >= 1")
    total = 0.0
    norm = 0.0
    for amplitude, noise in _octaves(x, y, seed, octaves, base_freq):
        total = total + amplitude * noise
        norm += amplitude
    result = np.clip(total / norm, -1.0, 1.0)
    if np.ndim(result) == 0:
        return float(result)
    return result


def compose(function: CompositionFunction, n: np.ndarray, gain: float, phase: float):
    """Map noise in [-1, 1] through a composition function, staying in [-1, 1]."""
    if function is CompositionFunction.identity:
        return n
    if function is CompositionFunction.sine:
        return np.sin(gain * n + phase)
    if function is CompositionFunction.absolute:
        return 2.0 * np.abs(n) - 1.0
    # ridge
    return 1.0 - 2.0 * np.abs(n)


def synthesize_texture(
    params: TextureParams, seed: int, resolution: Optional[int] = None
) -> TextureMap:
    """Palette-mapped fractal noise, each octave passed through a drawn composition function."""
    resolution = resolution or params.resolution
    if resolution < 16:
        raise ValueError("texture resolution must be >= 16")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(TEXTURE_STREAM,)))
    coords = (np.arange(resolution) + 0.5) / resolution
    xs, ys = np.meshgrid(coords, coords)

    total = np.zeros_like(xs)
    norm = 0.0
    for amplitude, noise in _octaves(xs, ys, seed, params.octaves, params.base_freq):
        function = params.compositions[int(rng.integers(len(params.compositions)))]
        gain = rng.uniform(*params.sine_gain_range)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        total += amplitude * compose(function, noise, gain, phase)
        norm += amplitude
    g = np.clip(total / norm, -1.0, 1.0)

    drawn = rng.uniform(0.0, 1.0, size=(2, 3))
    low, high = (np.asarray(c, dtype=float) for c in params.palette) if params.palette else drawn
    t = (0.5 * (g + 1.0))[..., None]
    rgb = (1.0 - t) * low + t * high
    pixels = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    return TextureMap(resolution, pixels, seed)


# -- configuration -----------------------------------------------------------------------


def load_randomisation_config(path: Union[str, Path]) -> RandomisationConfig:
    return load_document(Path(path).read_text(), RandomisationConfig)


def save_randomisation_config(cfg: RandomisationConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_document(cfg))


def _fixed(mean: Sequence[float]) -> ColorDistribution:
    return ColorDistribution(mean=tuple(mean), stddev=(0.0, 0.0, 0.0))


def apply_ablation(cfg: RandomisationConfig, switch: str) -> RandomisationConfig:
    """Return ``cfg`` with the named randomisation disabled."""
    switches = cfg.switches
    if switch == "full":
        return cfg
    if switch == "no_distractors":
        return cfg.model_copy(
            update={"switches": switches.model_copy(update={"distractors": False})}
        )
    if switch == "no_textures":
        return cfg.model_copy(update={"switches": switches.model_copy(update={"textures": False})})
    if switch == "no_moving_cam":
        return cfg.model_copy(
            update={"switches": switches.model_copy(update={"camera_jitter": False})}
        )
    if switch == "no_shadows":
        return cfg.model_copy(update={"switches": switches.model_copy(update={"shadows": False})})
    if switch == "baseline":
        base_mid = 0.5 * (cfg.base_height_range[0] + cfg.base_height_range[1])
        light_mid = 0.5 * (cfg.light_intensity_range[0] + cfg.light_intensity_range[1])
        return cfg.model_copy(
            update={
                "cube_color": _fixed(REAL_WORLD_CUBE),
                "basket_color": _fixed(REAL_WORLD_BASKET),
                "arm_color": _fixed(REAL_WORLD_ARM),
                "table_color": ColorRange(center=REAL_WORLD_TABLE, half_width=0.0),
                "background_color": ColorRange(center=REAL_WORLD_BACKGROUND, half_width=0.0),
                "camera_position_box": (0.0, 0.0, 0.0),
                "light_direction_cone": 0.0,
                "light_intensity_range": (light_mid, light_mid),
                "base_height_range": (base_mid, base_mid),
                "start_joint_stddev": 0.0,
                "switches": AblationSwitches(
                    distractors=False, textures=False, camera_jitter=False, shadows=True
                ),
            }
        )
    raise UnknownSwitch(f"unknown ablation switch {switch!r}; expected one of {ABLATION_SWITCHES}")


# -- sampling ----------------------------------------------------------------------------


def canonical_camera(cfg: RandomisationConfig, eye: Optional[np.ndarray] = None) -> Camera:
    camera = Camera.look_at(
        cfg.camera_eye,
        cfg.camera_target,
        cfg.camera_fov_y,
        cfg.image_resolution,
        cfg.image_resolution,
    )
    return camera if eye is None else camera.moved_to(eye)


def _plain_color(rng: np.random.Generator, color: ColorRange) -> np.ndarray:
    center = np.asarray(color.center, dtype=float)
    return np.clip(rng.uniform(center - color.half_width, center + color.half_width), 0.0, 1.0)


def _normal_color(rng: np.random.Generator, color: ColorDistribution) -> np.ndarray:
    return np.clip(rng.normal(color.mean, color.stddev), 0.0, 1.0)


def _light_in_cone(rng: np.random.Generator, axis: np.ndarray, half_angle: float) -> np.ndarray:
    cos_theta = rng.uniform(math.cos(half_angle), 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    sin_theta = math.sqrt(max(0.0, 1.0 - cos_theta * cos_theta))
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(axis, helper))
    e2 = np.cross(axis, e1)
    return cos_theta * axis + sin_theta * (math.cos(phi) * e1 + math.sin(phi) * e2)


def _basket(cfg: RandomisationConfig, side: BasketSide, xy, color) -> Basket:
    return Basket(
        position=(xy[0], xy[1], 0.0),
        half_extents=cfg.basket_half_extents,
        depth=cfg.basket_depth,
        color=color,
        side=side,
    )


def _cube(cfg: RandomisationConfig, xy, color) -> Cube:
    position = (xy[0], xy[1], TABLE_HEIGHT + 0.5 * cfg.cube_edge)
    return Cube(position=position, edge=cfg.cube_edge, color=color)


def _overlaps(
    candidate: Distractor, cube: Cube, basket: Basket, placed: List[Distractor]
) -> bool:
    xy = candidate.position[:2]
    r = candidate.footprint_radius
    if np.hypot(*xy) < ARM_BASE_CLEARANCE + r:
        return True
    if np.hypot(*(xy - cube.position[:2])) < r + cube.footprint_radius:
        return True
    if basket.inside_footprint_xy(xy, margin=r):
        return True
    return any(
        np.hypot(*(xy - other.position[:2])) < r + other.footprint_radius for other in placed
    )


def _place_distractor(
    rng: np.random.Generator,
    cfg: RandomisationConfig,
    cube: Cube,
    basket: Basket,
    placed: List[Distractor],
) -> Distractor:
    shape = list(DistractorShape)[int(rng.integers(len(DistractorShape)))]
    size = rng.uniform(*cfg.distractor_size_range)
    color = rng.uniform(0.0, 1.0, size=3)
    region = cfg.distractor_region
    for attempt in Retrying(
        stop=stop_after_attempt(PLACEMENT_ATTEMPTS),
        retry=retry_if_exception_type(PlacementFailure),
        reraise=True,
    ):
        with attempt:
            xy = (rng.uniform(*region.x), rng.uniform(*region.y))
            candidate = Distractor(shape, (xy[0], xy[1], TABLE_HEIGHT + 0.5 * size), size, color)
            if _overlaps(candidate, cube, basket, placed):
                raise PlacementFailure(f"distractor {len(placed)} overlaps the scene")
    return candidate


def _scene_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SCENE_STREAM,)))


def sample_scene(
    cfg: RandomisationConfig,
    seed: int,
    *,
    cube_xy: Optional[Tuple[float, float]] = None,
    basket_side: Optional[BasketSide] = None,
    model: Optional[ArmModel] = None,
) -> Scene:
    """Draw a scene; the draw order is fixed so switches never shift other quantities."""
    model = model or reference_arm()
    rng = _scene_rng(seed)
    switches = cfg.switches

    cube_color = _normal_color(rng, cfg.cube_color)
    basket_color = _normal_color(rng, cfg.basket_color)
    arm_color = _normal_color(rng, cfg.arm_color)

    box = np.asarray(cfg.camera_position_box)
    jitter = rng.uniform(-0.5 * box, 0.5 * box)
    eye = np.asarray(cfg.camera_eye, dtype=float)
    camera = canonical_camera(cfg, eye + jitter if switches.camera_jitter else None)

    axis = _unit(cfg.light_direction)
    light = Light(
        _light_in_cone(rng, axis, cfg.light_direction_cone),
        float(rng.uniform(*cfg.light_intensity_range)),
    )
    base_height = float(rng.uniform(*cfg.base_height_range))
    start_joints = model.clamp(rng.normal(model.home, cfg.start_joint_stddev))

    drawn_xy = (rng.uniform(*cfg.cube_region.x), rng.uniform(*cfg.cube_region.y))
    drawn_side = cfg.basket_sides[int(rng.integers(len(cfg.basket_sides)))]
    side = basket_side or drawn_side
    region = cfg.basket_regions[side]
    basket_xy = (rng.uniform(*region.x), rng.uniform(*region.y))

    table_seed = int(rng.integers(0, 2**63))
    background_seed = int(rng.integers(0, 2**63))
    table_plain = _plain_color(rng, cfg.table_color)
    background_plain = _plain_color(rng, cfg.background_color)
    if switches.textures:
        table = synthesize_texture(cfg.table_texture, table_seed)
        background = synthesize_texture(cfg.background_texture, background_seed)
    else:
        table = TextureMap.uniform(table_plain)
        background = TextureMap.uniform(background_plain)

    cube = _cube(cfg, cube_xy if cube_xy is not None else drawn_xy, cube_color)
    basket = _basket(cfg, side, basket_xy, basket_color)

    lo, hi = cfg.distractor_count_range
    count = int(rng.integers(lo, hi + 1))
    distractors: List[Distractor] = []
    if switches.distractors:
        for _ in range(count):
            try:
                distractors.append(_place_distractor(rng, cfg, cube, basket, distractors))
            except (PlacementFailure, RetryError) as e:
                logger.warning("scene %d: %s; keeping %d distractors", seed, e, len(distractors))
                break

    return Scene(
        cube=cube,
        basket=basket,
        arm_base_height=base_height,
        start_joints=start_joints,
        camera=camera,
        light=light,
        distractors=tuple(distractors),
        table_texture=table,
        background_texture=background,
        shadows_enabled=switches.shadows,
        arm_color=arm_color,
    )


def mean_scene(cfg: RandomisationConfig, model: Optional[ArmModel] = None) -> Scene:
    """Scene built from every distribution's mean or range midpoint, without distractors."""
    model = model or reference_arm()
    side = cfg.basket_sides[0]
    if cfg.switches.textures:
        table = synthesize_texture(cfg.table_texture, 0)
        background = synthesize_texture(cfg.background_texture, 1)
    else:
        table = TextureMap.uniform(np.clip(cfg.table_color.center, 0.0, 1.0))
        background = TextureMap.uniform(np.clip(cfg.background_color.center, 0.0, 1.0))
    return Scene(
        cube=_cube(cfg, cfg.cube_region.center, np.clip(cfg.cube_color.mean, 0.0, 1.0)),
        basket=_basket(
            cfg, side, cfg.basket_regions[side].center, np.clip(cfg.basket_color.mean, 0.0, 1.0)
        ),
        arm_base_height=0.5 * (cfg.base_height_range[0] + cfg.base_height_range[1]),
        start_joints=model.clamp(model.home),
        camera=canonical_camera(cfg),
        light=Light(
            _unit(cfg.light_direction),
            0.5 * (cfg.light_intensity_range[0] + cfg.light_intensity_range[1]),
        ),
        distractors=(),
        table_texture=table,
        background_texture=background,
        shadows_enabled=cfg.switches.shadows,
        arm_color=np.clip(cfg.arm_color.mean, 0.0, 1.0),
    )


def scene_summary(scene: Scene) -> Dict[str, object]:
    """Loggable digest of a scene's sampled quantities."""
    return {
        "cube": None if scene.cube is None else scene.cube.position.round(3).tolist(),
        "basket": None if scene.basket is None else scene.basket.side.value,
        "distractors": len(scene.distractors),
        "camera": scene.camera.pose.translation.round(3).tolist(),
        "light": round(scene.light.intensity, 3),
    }
