import math

import numpy as np
import pytest
from scipy import stats

from mathkin import reference_arm
from randgrasp_config import (
    AblationSwitches,
    BasketSide,
    ColorDistribution,
    ColorRange,
    CompositionFunction,
    RandomisationConfig,
    Region,
    TextureParams,
)
from scene import (
    ABLATION_SWITCHES,
    Camera,
    UnknownSwitch,
    _permutation,
    apply_ablation,
    gradient_noise,
    mean_scene,
    perlin,
    sample_scene,
    synthesize_texture,
)

SAMPLES = 10_000


@pytest.fixture(scope="module")
def population():
    cfg = apply_ablation(RandomisationConfig(), "no_textures")
    return cfg, [sample_scene(cfg, seed) for seed in range(SAMPLES)]


def test_same_seed_same_scene():
    cfg = RandomisationConfig()
    assert sample_scene(cfg, 11).fingerprint() == sample_scene(cfg, 11).fingerprint()
    assert sample_scene(cfg, 11).fingerprint() != sample_scene(cfg, 12).fingerprint()


def test_degenerate_config_gives_mean_scene():
    fixed = (0.0, 0.0, 0.0)
    cfg = RandomisationConfig(
        cube_color=ColorDistribution(mean=(0.8, 0.1, 0.1), stddev=fixed),
        basket_color=ColorDistribution(mean=(0.2, 0.3, 0.6), stddev=fixed),
        arm_color=ColorDistribution(mean=(0.2, 0.2, 0.2), stddev=fixed),
        table_color=ColorRange(center=(0.5, 0.4, 0.3), half_width=0.0),
        background_color=ColorRange(center=(0.7, 0.7, 0.7), half_width=0.0),
        cube_region=Region(x=(0.4, 0.4), y=(0.1, 0.1)),
        basket_sides=(BasketSide.right,),
        basket_regions={BasketSide.right: Region(x=(0.1, 0.1), y=(-0.45, -0.45))},
        camera_position_box=fixed,
        light_direction_cone=0.0,
        light_intensity_range=(1.0, 1.0),
        base_height_range=(0.05, 0.05),
        start_joint_stddev=0.0,
        distractor_count_range=(0, 0),
        switches=AblationSwitches(textures=False),
    )
    expected = mean_scene(cfg).fingerprint()
    for seed in (0, 1, 2**40):
        assert sample_scene(cfg, seed).fingerprint() == expected


def test_cube_positions_are_uniform(population):
    cfg, scenes = population
    xy = np.array([s.cube.position[:2] for s in scenes])
    counts, _, _ = np.histogram2d(
        xy[:, 0], xy[:, 1], bins=4, range=(cfg.cube_region.x, cfg.cube_region.y)
    )
    assert counts.sum() == SAMPLES
    assert stats.chisquare(counts.ravel()).pvalue > 0.01


def test_start_joints_are_normal(population):
    cfg, scenes = population
    home = reference_arm().home
    z = np.array([(s.start_joints - home) / cfg.start_joint_stddev for s in scenes])
    for column in z.T:
        assert abs(stats.skew(column)) < 0.1
        assert abs(stats.kurtosis(column)) < 0.25
        assert abs(column.mean()) < 0.05
        assert column.std() == pytest.approx(1.0, abs=0.05)


def test_sampled_quantities_stay_in_bounds(population):
    cfg, scenes = population
    box = 0.5 * np.asarray(cfg.camera_position_box)
    axis = np.asarray(cfg.light_direction) / np.linalg.norm(cfg.light_direction)
    canonical = Camera.look_at(cfg.camera_eye, cfg.camera_target, cfg.camera_fov_y, 64, 64)
    for s in scenes[:1000]:
        offset = s.camera.pose.translation - np.asarray(cfg.camera_eye)
        assert np.all(np.abs(offset) <= box + 1e-12)
        assert np.array_equal(s.camera.pose.rotation, canonical.pose.rotation)
        angle = math.acos(min(1.0, float(np.dot(s.light.direction, axis))))
        assert angle <= cfg.light_direction_cone + 1e-9
        assert cfg.base_height_range[0] <= s.arm_base_height <= cfg.base_height_range[1]
        assert np.all((s.cube.color >= 0) & (s.cube.color <= 1))
        region = cfg.basket_regions[s.basket.side]
        assert region.x[0] <= s.basket.position[0] <= region.x[1]
        assert region.y[0] <= s.basket.position[1] <= region.y[1]


def test_distractors_never_overlap(population):
    cfg, scenes = population
    counts = set()
    for s in scenes:
        counts.add(len(s.distractors))
        for i, d in enumerate(s.distractors):
            r = d.footprint_radius
            xy = d.position[:2]
            assert np.hypot(*(xy - s.cube.position[:2])) >= r + s.cube.footprint_radius
            assert not s.basket.inside_footprint_xy(xy, margin=r)
            for other in s.distractors[:i]:
                assert np.hypot(*(xy - other.position[:2])) >= r + other.footprint_radius
    assert min(counts) == cfg.distractor_count_range[0]
    assert max(counts) == cfg.distractor_count_range[1]


def test_both_basket_sides_are_used(population):
    _, scenes = population
    assert {s.basket.side for s in scenes} == set(BasketSide)


@pytest.mark.parametrize("switch", ABLATION_SWITCHES)
def test_switches_keep_object_placement(switch):
    cfg = RandomisationConfig()
    reference = sample_scene(cfg, 5)
    ablated = sample_scene(apply_ablation(cfg, switch), 5)
    assert np.array_equal(ablated.cube.position, reference.cube.position)
    assert np.array_equal(ablated.basket.position, reference.basket.position)


def test_no_textures_gives_plain_surfaces():
    scene = sample_scene(apply_ablation(RandomisationConfig(), "no_textures"), 3)
    for texture in (scene.table_texture, scene.background_texture):
        flat = texture.pixels.reshape(-1, 3)
        assert np.all(flat == flat[0])


def test_no_moving_cam_fixes_camera():
    cfg = apply_ablation(RandomisationConfig(), "no_moving_cam")
    poses = {sample_scene(cfg, seed).camera.pose.translation.tobytes() for seed in range(100)}
    assert len(poses) == 1


def test_no_distractors_and_no_shadows():
    cfg = RandomisationConfig()
    assert all(
        not sample_scene(apply_ablation(cfg, "no_distractors"), seed).distractors
        for seed in range(20)
    )
    assert not sample_scene(apply_ablation(cfg, "no_shadows"), 0).shadows_enabled


def test_baseline_varies_only_positions():
    cfg = apply_ablation(RandomisationConfig(), "baseline")
    a, b = sample_scene(cfg, 1), sample_scene(cfg, 2)
    assert not np.array_equal(a.cube.position, b.cube.position)
    for first, second in (
        (a.cube.color, b.cube.color),
        (a.basket.color, b.basket.color),
        (a.arm_color, b.arm_color),
        (a.camera.pose.translation, b.camera.pose.translation),
        (a.light.direction, b.light.direction),
        (a.start_joints, b.start_joints),
        (a.table_texture.pixels, b.table_texture.pixels),
    ):
        assert np.array_equal(first, second)
    assert a.arm_base_height == b.arm_base_height
    assert not a.distractors and not b.distractors


def test_unknown_switch():
    with pytest.raises(UnknownSwitch):
        apply_ablation(RandomisationConfig(), "no_gravity")


def test_gradient_noise_vanishes_on_lattice():
    xs, ys = np.meshgrid(np.arange(-5.0, 6.0), np.arange(-5.0, 6.0))
    assert not np.any(perlin(xs, ys, seed=3, octaves=1, base_freq=1.0))
    assert not np.any(gradient_noise(xs, ys, _permutation(9, 0)))


def test_perlin_range_and_continuity():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-50, 50, size=(2, 1_000_000))
    values = perlin(x, y, seed=17, octaves=4, base_freq=1.0)
    assert values.min() >= -1.0 and values.max() <= 1.0
    line = perlin(np.arange(0, 1, 1e-3), np.full(1000, 0.3), seed=17, octaves=4, base_freq=4.0)
    assert np.max(np.abs(np.diff(line))) < 0.1


def test_perlin_deterministic_and_scalar():
    value = perlin(0.37, 1.21, seed=5, octaves=3)
    assert isinstance(value, float)
    assert value == perlin(0.37, 1.21, seed=5, octaves=3)
    assert value != perlin(0.37, 1.21, seed=6, octaves=3)
    with pytest.raises(ValueError):
        perlin(0.0, 0.0, seed=0, octaves=0)


def test_identity_composition_maps_raw_noise():
    params = TextureParams(
        octaves=3,
        base_freq=2.0,
        resolution=32,
        compositions=(CompositionFunction.identity,),
        palette=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
    )
    texture = synthesize_texture(params, seed=21)
    coords = (np.arange(32) + 0.5) / 32
    xs, ys = np.meshgrid(coords, coords)
    g = perlin(xs, ys, seed=21, octaves=3, base_freq=2.0)
    expected = np.round(np.clip(0.5 * (g + 1.0), 0.0, 1.0) * 255.0).astype(np.uint8)
    for channel in range(3):
        assert np.array_equal(texture.pixels[..., channel], expected)


def test_textures_are_diverse_and_reproducible():
    params = TextureParams()
    a = synthesize_texture(params, seed=42)
    assert np.array_equal(a.pixels, synthesize_texture(params, seed=42).pixels)
    b = synthesize_texture(params, seed=43)
    assert np.mean(np.abs(a.pixels / 255.0 - b.pixels / 255.0)) > 0.05
    assert a.pixels.shape == (64, 64, 3)


def test_texture_resolution_floor():
    with pytest.raises(ValueError):
        synthesize_texture(TextureParams(), seed=1, resolution=8)


def test_camera_looks_at_target():
    camera = Camera.look_at((1.0, 0.0, 1.0), (0.0, 0.0, 0.0), math.radians(60), 32, 32)
    local = camera.world_to_camera(np.array([0.0, 0.0, 0.0]))
    assert np.allclose(local, [0.0, 0.0, math.sqrt(2.0)])
    assert camera.pose.is_orthonormal()
    with pytest.raises(ValueError):
        Camera(camera.pose, math.radians(60), 32, 32, near=1.0, far=0.5)
