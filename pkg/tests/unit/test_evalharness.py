import math
from types import SimpleNamespace

import numpy as np
import pydantic
import pytest

import evalharness
from control import with_stage
from dataset import GenerationStalled
from evalharness import (
    GRID_CELLS,
    AblationResult,
    AblationRow,
    MatrixConfig,
    OracleController,
    SweepPoint,
    TrialOutcome,
    TrialReport,
    TrialSpec,
    ZeroController,
    cell_center,
    condition_config,
    default_eval_config,
    format_table,
    grid_specs,
    run_ablation_matrix,
    run_trial,
    trial_scene,
)
from net import AdamState, Checkpoint, ControllerNet
from randgrasp_config import (
    BasketSide,
    GripperAction,
    NetConfig,
    RandgraspError,
    RandomisationConfig,
    StageId,
    TestCondition,
    TrainConfig,
    budget_for,
)
from tests.unit.helpers import reference_normalizer


@pytest.fixture
def cfg():
    return default_eval_config().model_copy(update={"image_resolution": 32})


def _outcome(cell, side=BasketSide.left, vicinity=True, grasped=True, full=True):
    return TrialOutcome(
        cell_index=cell,
        basket_side=side,
        scene_seed=cell,
        cube_vicinity=vicinity,
        cube_grasped=grasped,
        full_task=full,
        steps=10,
        min_distance=0.01,
    )


def test_cell_centers_tile_the_cube_region():
    cfg = RandomisationConfig()
    (x0, x1), (y0, y1) = cfg.cube_region.x, cfg.cube_region.y
    centers = [cell_center(cfg, i) for i in range(GRID_CELLS * GRID_CELLS)]
    assert centers[0] == pytest.approx((x0 + (x1 - x0) / 8, y0 + (y1 - y0) / 8))
    assert centers[-1] == pytest.approx((x1 - (x1 - x0) / 8, y1 - (y1 - y0) / 8))
    assert len(set(centers)) == 16
    assert all(x0 < x < x1 and y0 < y < y1 for x, y in centers)


def test_trial_spec_rejects_cells_off_the_grid():
    with pytest.raises(ValueError):
        TrialSpec(16, BasketSide.left, 0)


def test_grid_seeds_depend_only_on_slot():
    specs = grid_specs("oracle", 5)
    assert len(specs) == 32
    assert [s.basket_side for s in specs].count(BasketSide.right) == 16
    assert len({s.scene_seed for s in specs}) == 32
    other = grid_specs("model.rgck", 5, TestCondition.small_cube)
    assert [s.scene_seed for s in specs] == [s.scene_seed for s in other]
    assert [s.scene_seed for s in specs] != [s.scene_seed for s in grid_specs("oracle", 6)]


def test_trial_scene_places_cube_at_cell(cfg):
    spec = TrialSpec(6, BasketSide.right, 11)
    scene = trial_scene(spec, cfg)
    assert tuple(scene.cube.position[:2]) == pytest.approx(cell_center(cfg, 6))
    assert scene.basket.side is BasketSide.right
    assert trial_scene(spec, cfg).fingerprint() == scene.fingerprint()


def test_test_conditions_adjust_the_distribution(cfg):
    assert not cfg.switches.distractors
    assert condition_config(cfg, TestCondition.distractors).switches.distractors
    small = condition_config(cfg, TestCondition.small_cube)
    assert small.cube_edge == pytest.approx(0.5 * cfg.cube_edge)
    assert condition_config(cfg, TestCondition.moving_camera) is cfg


def test_outcome_categories_are_nested():
    _outcome(0, vicinity=True, grasped=False, full=False)
    with pytest.raises(pydantic.ValidationError):
        _outcome(0, vicinity=True, grasped=False, full=True)
    with pytest.raises(pydantic.ValidationError):
        _outcome(0, vicinity=False, grasped=True, full=False)


def test_zero_controller_fails_every_category(cfg):
    outcome = run_trial(
        TrialSpec(3, BasketSide.left, 1), cfg=cfg, controller=ZeroController(), max_steps=5
    )
    assert outcome.steps == 5
    assert not (outcome.cube_vicinity or outcome.cube_grasped or outcome.full_task)
    assert outcome.min_distance > evalharness.VICINITY_RADIUS


def test_oracle_completes_a_trial(cfg):
    outcome = run_trial(TrialSpec(5, BasketSide.left, 2), cfg=cfg, controller=OracleController())
    assert outcome.cube_vicinity and outcome.cube_grasped and outcome.full_task
    assert outcome.steps < evalharness.MAX_STEPS


def test_never_closing_oracle_only_reaches_vicinity(cfg):
    def drop_grasp(plans):
        return with_stage(plans, StageId.CLOSE_GRIPPER, gripper_command=GripperAction.NO_OP)

    outcome = run_trial(
        TrialSpec(9, BasketSide.right, 3), cfg=cfg, controller=OracleController(drop_grasp)
    )
    assert outcome.cube_vicinity
    assert not outcome.cube_grasped and not outcome.full_task
    assert outcome.steps == evalharness.MAX_STEPS


def test_frames_are_dumped_per_step(tmp_path, cfg):
    run_trial(
        TrialSpec(0, BasketSide.left, 4),
        cfg=cfg,
        controller=ZeroController(),
        max_steps=3,
        frame_dir=tmp_path / "frames",
    )
    names = sorted(p.name for p in (tmp_path / "frames").iterdir())
    assert names == ["left_00_0000.ppm", "left_00_0001.ppm", "left_00_0002.ppm"]


def test_report_sorts_and_scores_outcomes():
    outcomes = [
        _outcome(2, BasketSide.right),
        _outcome(1, BasketSide.left, grasped=False, full=False),
        _outcome(0, BasketSide.right, vicinity=False, grasped=False, full=False),
        _outcome(0, BasketSide.left, full=False),
    ]
    report = TrialReport(controller="oracle", eval_seed=0, outcomes=outcomes)
    order = [(o.basket_side.value, o.cell_index) for o in report.outcomes]
    assert order == [("left", 0), ("left", 1), ("right", 0), ("right", 2)]
    assert (report.cube_vicinity, report.cube_grasped, report.full_task) == (75.0, 50.0, 25.0)
    assert report.trials == 4
    assert report.model_dump()["full_task"] == 25.0
    empty = TrialReport(controller="zero", eval_seed=0, outcomes=[])
    assert empty.full_task == 0.0


def test_matrix_rejects_unknown_rows():
    with pytest.raises(pydantic.ValidationError):
        MatrixConfig(rows=("full", "no_gravity"))
    with pytest.raises(pydantic.ValidationError):
        MatrixConfig(rows=())


def test_format_table_lists_rows_errors_and_sweep():
    report = TrialReport(controller="c", eval_seed=1, outcomes=[_outcome(0)])
    result = AblationResult(
        budget=budget_for("tiny"),
        rows=[
            AblationRow(train="full", test=TestCondition.standard, report=report),
            AblationRow(train="no_lstm", test=TestCondition.standard, error="boom"),
        ],
        sweep=[
            SweepPoint(frames=250, episodes=1, report=report),
            SweepPoint(frames=500, episodes=2),
        ],
    )
    lines = format_table(result).splitlines()
    assert lines[0].split()[:2] == ["Train", "Test"]
    assert lines[2].startswith("full") and lines[2].count("100.0%") == 3
    assert lines[3].startswith("no_lstm") and lines[3].endswith("error: boom")
    assert lines[-2].split() == ["250", "1", "100.0%"]
    assert lines[-1].split() == ["500", "2", "error"]
    assert result.row("no_lstm").error == "boom"
    with pytest.raises(KeyError):
        result.row("baseline")


@pytest.fixture
def stubbed_pipeline(monkeypatch):
    calls = SimpleNamespace(generated=[], trained=[], graded=[])

    def fake_generate(cfg, episodes, workers, seed, path):
        calls.generated.append((path.name, episodes, cfg))
        return SimpleNamespace(steps=episodes * 100)

    def fake_train(dataset, net_cfg, train_cfg, model=None):
        calls.trained.append((dataset.name, net_cfg))
        if not net_cfg.use_lstm:
            raise RandgraspError("diverged")
        return SimpleNamespace(checkpoint=None)

    def fake_grid(controller, model, eval_seed, *, cfg, condition, max_steps, workers):
        calls.graded.append((controller, condition))
        return TrialReport(
            controller=controller,
            condition=condition,
            eval_seed=eval_seed,
            outcomes=[_outcome(0)],
        )

    monkeypatch.setattr(evalharness, "generate", fake_generate)
    monkeypatch.setattr(evalharness, "train", fake_train)
    monkeypatch.setattr(evalharness, "save_checkpoint", lambda checkpoint, path: None)
    monkeypatch.setattr(evalharness, "run_grid", fake_grid)
    return calls


def test_network_rows_share_the_full_dataset(tmp_path, stubbed_pipeline):
    matrix = MatrixConfig(
        rows=("full", "no_joint_angles", "no_auxiliary", "baseline"), sweep=False
    )
    result = run_ablation_matrix(matrix, budget_for("tiny"), tmp_path)
    assert [name for name, _, _ in stubbed_pipeline.generated] == ["full.rgds", "baseline.rgds"]
    assert [name for name, _ in stubbed_pipeline.trained] == ["full.rgds"] * 3 + ["baseline.rgds"]
    assert [r.train for r in result.rows] == list(matrix.rows)
    assert all(r.report is not None for r in result.rows)
    baseline_cfg = stubbed_pipeline.generated[1][2]
    assert not baseline_cfg.switches.textures and not baseline_cfg.switches.distractors


def test_failing_row_does_not_stop_the_matrix(tmp_path, stubbed_pipeline):
    matrix = MatrixConfig(
        rows=("no_lstm", "full"),
        conditions=(TestCondition.standard, TestCondition.small_cube),
        sweep=False,
    )
    result = run_ablation_matrix(matrix, budget_for("tiny"), tmp_path)
    assert [(r.train, r.test) for r in result.rows] == [
        ("no_lstm", TestCondition.standard),
        ("no_lstm", TestCondition.small_cube),
        ("full", TestCondition.standard),
        ("full", TestCondition.small_cube),
    ]
    assert result.row("no_lstm").error == "diverged"
    small_cube = result.row("full", TestCondition.small_cube)
    assert small_cube.report.condition is TestCondition.small_cube


def test_generation_failure_marks_dependent_rows(tmp_path, stubbed_pipeline, monkeypatch):
    def stalled(cfg, episodes, workers, seed, path):
        raise GenerationStalled("no successful attempts")

    monkeypatch.setattr(evalharness, "generate", stalled)
    result = run_ablation_matrix(
        MatrixConfig(rows=("full", "no_auxiliary"), sweep=False), budget_for("tiny"), tmp_path
    )
    assert all("no successful attempts" in r.error for r in result.rows)
    assert stubbed_pipeline.trained == []


def test_sweep_sizes_datasets_by_frame_count(tmp_path, stubbed_pipeline):
    budget = budget_for("tiny").model_copy(update={"sweep_frames": (100, 250, 600)})
    result = run_ablation_matrix(MatrixConfig(rows=("full",)), budget, tmp_path)
    assert [p.episodes for p in result.sweep] == [1, 1, math.ceil(600 / 250)]
    assert [p.steps for p in result.sweep] == [100, 100, 300]
    assert all(p.report is not None for p in result.sweep)
    assert stubbed_pipeline.generated[-1][0] == "sweep_600.rgds"


def test_net_controller_rescales_outputs(tmp_path):
    net_cfg = NetConfig.for_profile("tiny")
    net = ControllerNet(net_cfg)
    checkpoint = Checkpoint(
        net_config=net_cfg,
        train_config=TrainConfig(),
        normalizer=reference_normalizer(),
        class_weights=np.ones(3),
        parameters=net.parameters,
        adam=AdamState.zeros(net.parameter_count),
    )
    controller = evalharness.NetController(checkpoint)
    assert controller.resolution == 8
    image = SimpleNamespace(pixels=np.zeros((8, 8, 3), dtype=np.uint8))
    action = controller.act(image, np.zeros(6))
    assert np.allclose(action.velocities, 0.1)
    assert np.allclose(action.markers["cube"], [0.4, 0.0, 0.03])
