import dataclasses
import math

import numpy as np
import pytest

from randgrasp_config import DistractorShape, RandomisationConfig
from render import (
    BehindCamera,
    Image,
    overlay_marker,
    project_point,
    rasterize,
    read_ppm,
    render,
    render_scene,
    resolve_depth,
    write_ppm,
)
from scene import Camera, Distractor, apply_ablation, mean_scene, sample_scene


@pytest.fixture
def scene():
    return mean_scene(RandomisationConfig(image_resolution=48))


def test_target_projects_to_principal_point():
    camera = Camera.look_at((1.0, 0.5, 1.0), (0.2, 0.0, 0.0), math.radians(60), 40, 30)
    u, v, depth = project_point(camera, (0.2, 0.0, 0.0))
    assert (u, v) == pytest.approx((20.0, 15.0))
    assert depth == pytest.approx(np.linalg.norm([0.8, 0.5, 1.0]))


def test_point_behind_camera():
    camera = Camera.look_at((1.0, 0.0, 1.0), (0.0, 0.0, 0.0), math.radians(60), 16, 16)
    with pytest.raises(BehindCamera):
        project_point(camera, (2.0, 0.0, 2.0))


def test_render_is_deterministic(scene):
    assert render_scene(scene).digest() == render_scene(scene).digest()
    image = render_scene(scene)
    assert image.pixels.shape == (48, 48, 3)
    assert image.pixels.dtype == np.uint8


def test_random_scenes_render_deterministically():
    cfg = RandomisationConfig(image_resolution=32)
    first = [render_scene(sample_scene(cfg, seed)).digest() for seed in range(3)]
    assert first == [render_scene(sample_scene(cfg, seed)).digest() for seed in range(3)]
    assert len(set(first)) == 3


def test_cube_is_visible_at_its_projection():
    scene = mean_scene(RandomisationConfig(image_resolution=128))
    image = render(scene, None, scene.camera)
    u, v, _ = project_point(scene.camera, scene.cube.position)
    r, g, b = image.pixels[int(v), int(u)].astype(int)
    assert r > g + 50 and r > b + 50


def test_arm_changes_the_image(scene):
    without = render(scene, None, scene.camera)
    with_arm = render_scene(scene)
    assert without.digest() != with_arm.digest()


def test_shadows_only_darken():
    cfg = apply_ablation(RandomisationConfig(image_resolution=48), "no_textures")
    lit = mean_scene(cfg)
    flat = mean_scene(apply_ablation(cfg, "no_shadows"))
    shadowed = render_scene(lit).pixels.astype(int)
    plain = render_scene(flat).pixels.astype(int)
    assert np.any(shadowed != plain)
    assert np.all(shadowed <= plain)


def test_overlay_marker_draws_a_cross(scene):
    image = render(scene, None, scene.camera)
    marked = overlay_marker(image, scene.camera, scene.cube.position, (0.0, 1.0, 0.0))
    u, v, _ = project_point(scene.camera, scene.cube.position)
    ci, cj = int(math.floor(u)), int(math.floor(v))
    assert tuple(marked.pixels[cj, ci]) == (0, 255, 0)
    assert tuple(marked.pixels[cj, ci + 2]) == (0, 255, 0)
    assert tuple(marked.pixels[cj + 2, ci]) == (0, 255, 0)
    assert np.array_equal(image.pixels[cj + 2, ci + 2], marked.pixels[cj + 2, ci + 2])


def test_overlay_marker_outside_frame_is_a_noop(scene):
    image = render(scene, None, scene.camera)
    assert overlay_marker(image, scene.camera, (0.0, 50.0, 0.0), (1, 1, 1)) is image
    assert overlay_marker(image, scene.camera, (5.0, 0.0, 3.0), (1, 1, 1)) is image


def test_rasterize_is_winding_independent():
    tri = np.array([[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]])
    depth = np.ones((1, 3))
    ccw = rasterize(tri, depth, 4, 4)
    cw = rasterize(tri[:, ::-1], depth, 4, 4)
    assert sorted(ccw.pixel.tolist()) == sorted(cw.pixel.tolist())
    assert 0 in ccw.pixel.tolist()
    assert 15 not in ccw.pixel.tolist()
    assert np.allclose(ccw.weights.sum(axis=1), 1.0)


def test_equal_depth_keeps_first_triangle():
    quad = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]])
    screen = np.stack([quad, quad])
    frags = rasterize(screen, np.full((2, 3), 2.0), 8, 8)
    winners = resolve_depth(frags)
    assert set(frags.triangle[winners].tolist()) == {0}


def test_nearer_triangle_wins():
    quad = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]])
    screen = np.stack([quad, quad])
    depth = np.array([[3.0] * 3, [1.0] * 3])
    frags = rasterize(screen, depth, 8, 8)
    winners = resolve_depth(frags)
    assert set(frags.triangle[winners].tolist()) == {1}
    assert np.allclose(frags.depth[winners], 1.0)


def _boxes_only(*boxes):
    scene = mean_scene(RandomisationConfig(image_resolution=64))
    distractors = [Distractor(DistractorShape.box, *box) for box in boxes]
    return dataclasses.replace(
        scene, cube=None, basket=None, distractors=distractors, shadows_enabled=False
    )


def test_box_behind_a_larger_box_contributes_no_pixels():
    # the camera looks down the -x axis, so the small box sits behind the large one
    large = ((0.45, 0.0, 0.1), 0.2, (0.9, 0.9, 0.1))
    small = ((0.30, 0.0, 0.021), 0.04, (0.0, 0.0, 1.0))

    def draw(*boxes):
        scene = _boxes_only(*boxes)
        return render(scene, None, scene.camera)

    assert draw(small).digest() != draw().digest()
    assert draw(large, small).digest() == draw(large).digest()


def test_degenerate_triangle_covers_nothing():
    line = np.array([[[0.0, 0.0], [2.0, 2.0], [4.0, 4.0]]])
    assert len(rasterize(line, np.ones((1, 3)), 8, 8).pixel) == 0


def test_ppm_roundtrip(tmp_path, scene):
    image = render_scene(scene)
    write_ppm(image, tmp_path / "frame.ppm")
    assert read_ppm(tmp_path / "frame.ppm").digest() == image.digest()
    assert (tmp_path / "frame.ppm").read_bytes().startswith(b"P6\n48 48\n255\n")


def test_image_shape_is_checked():
    with pytest.raises(ValueError):
        Image(4, 3, np.zeros((4, 3, 3)))
