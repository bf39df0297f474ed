# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Closed-loop trials on the 4x4 evaluation grid and the ablation matrix."""

import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, computed_field, field_validator, model_validator

from control import (
    CONTROL_PERIOD,
    ArmWorld,
    PlanningFailed,
    StagePlan,
    plan_episode,
    script_episode,
)
from dataset import generate
from mathkin import ArmModel, reference_arm
from net import Checkpoint, Normalizer, load_checkpoint, save_checkpoint, train
from randgrasp_config import (
    JOINT_COUNT,
    AblationSwitches,
    BasketSide,
    BudgetConfig,
    GripperAction,
    NetConfig,
    RandgraspError,
    RandomisationConfig,
    TestCondition,
    TrainConfig,
)
from render import Image, overlay_marker, render, write_ppm
from scene import ABLATION_SWITCHES, Scene, apply_ablation, sample_scene

logger = logging.getLogger(__name__)

GRID_CELLS = 4
VICINITY_RADIUS = 0.02
GRASP_LIFT = 0.03
MAX_STEPS = 600
ORACLE_GAIN = 5.0
MOVING_CAMERA_AMPLITUDE = 0.0254
MOVING_CAMERA_PERIOD = 4.0
EVAL_STREAM = 0xE7A1
EXPECTED_EPISODE_STEPS = 250
CUBE_MARKER = (0.1, 0.9, 0.1)
GRIPPER_MARKER = (0.1, 0.4, 1.0)

NET_ABLATIONS: Dict[str, Dict[str, bool]] = {
    "no_lstm": {"use_lstm": False},
    "no_auxiliary": {"use_auxiliary": False},
    "no_joint_angles": {"use_joint_angles": False},
}
ROW_NAMES = ABLATION_SWITCHES + tuple(NET_ABLATIONS)


def default_eval_config() -> RandomisationConfig:
    """Held-out evaluation distribution: textures on, distractors off."""
    return RandomisationConfig(switches=AblationSwitches(distractors=False))


# -- controllers -------------------------------------------------------------------------


@dataclass
class ControlAction:
    velocities: np.ndarray
    gripper: GripperAction = GripperAction.NO_OP
    markers: Dict[str, np.ndarray] = field(default_factory=dict)


class Controller(Protocol):
    needs_image: bool
    resolution: Optional[int]

    def reset(self, scene: Scene, model: ArmModel) -> None:
        ...

    def act(self, image: Optional[Image], joints: np.ndarray) -> ControlAction:
        ...


class ZeroController:
    """Commands nothing, ever."""

    needs_image = False
    resolution = None

    def reset(self, scene: Scene, model: ArmModel) -> None:
        pass

    def act(self, image: Optional[Image], joints: np.ndarray) -> ControlAction:
        return ControlAction(np.zeros(JOINT_COUNT))


class OracleController:
    """Privileged scripted demonstrator tracking its joint trajectory with angle feedback.

    ``plan_transform`` edits the stage plans before scripting, e.g. to drop the grasp.
    """

    needs_image = False
    resolution = None

    def __init__(
        self,
        plan_transform: Optional[Callable[[List[StagePlan]], List[StagePlan]]] = None,
        gain: float = ORACLE_GAIN,
    ):
        self.plan_transform = plan_transform
        self.gain = gain
        self._steps = []
        self._final = np.zeros(JOINT_COUNT)
        self._index = 0

    def reset(self, scene: Scene, model: ArmModel) -> None:
        plans = plan_episode(scene, model)
        if self.plan_transform is not None:
            plans = self.plan_transform(plans)
        self._steps, self._final = script_episode(plans, scene.start_joints, model)
        self._index = 0

    def act(self, image: Optional[Image], joints: np.ndarray) -> ControlAction:
        if self._index < len(self._steps):
            ref = self._steps[self._index]
            target, velocity, action = ref.angles, ref.velocities, ref.action
        else:
            target, velocity, action = self._final, np.zeros(JOINT_COUNT), GripperAction.NO_OP
        self._index += 1
        return ControlAction(velocity + self.gain * (target - joints), action)


class NetController:
    """Learned controller deployed from a checkpoint."""

    needs_image = True

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.normalizer: Normalizer = checkpoint.normalizer
        self.net = checkpoint.controller()
        self.resolution = checkpoint.net_config.input_resolution

    def reset(self, scene: Scene, model: ArmModel) -> None:
        self.net.reset_state()

    def act(self, image: Optional[Image], joints: np.ndarray) -> ControlAction:
        out = self.net.step(Normalizer.image(image.pixels), self.normalizer.joints(joints))
        return ControlAction(
            self.normalizer.velocity_inverse(out.velocity),
            out.action,
            markers={
                "cube": self.normalizer.cube_inverse(out.cube_position),
                "gripper": self.normalizer.gripper_inverse(out.gripper_position),
            },
        )


@functools.lru_cache(maxsize=4)
def _cached_checkpoint(path: str) -> Checkpoint:
    return load_checkpoint(path)


def resolve_controller(reference: str) -> Controller:
    """Build a controller from ``"oracle"``, ``"zero"`` or a checkpoint path."""
    if reference == "oracle":
        return OracleController()
    if reference == "zero":
        return ZeroController()
    return NetController(_cached_checkpoint(str(Path(reference).resolve())))


# -- trials ------------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialSpec:
    cell_index: int
    basket_side: BasketSide
    scene_seed: int
    controller: str = "oracle"
    condition: TestCondition = TestCondition.standard

    def __post_init__(self):
        if not 0 <= self.cell_index < GRID_CELLS * GRID_CELLS:
            raise ValueError(f"cell index {self.cell_index} outside the 4x4 grid")


def cell_center(cfg: RandomisationConfig, cell_index: int) -> Tuple[float, float]:
    """Center of a grid cell; cells are numbered row-major from the low-x, low-y corner."""
    row, col = divmod(cell_index, GRID_CELLS)
    (x0, x1), (y0, y1) = cfg.cube_region.x, cfg.cube_region.y
    return (
        x0 + (row + 0.5) * (x1 - x0) / GRID_CELLS,
        y0 + (col + 0.5) * (y1 - y0) / GRID_CELLS,
    )


def trial_seed(eval_seed: int, trial_index: int) -> int:
    sequence = np.random.SeedSequence(eval_seed, spawn_key=(EVAL_STREAM, trial_index))
    return int(sequence.generate_state(2, np.uint64)[0] >> np.uint64(1))


def condition_config(cfg: RandomisationConfig, condition: TestCondition) -> RandomisationConfig:
    if condition is TestCondition.distractors:
        return cfg.model_copy(
            update={"switches": cfg.switches.model_copy(update={"distractors": True})}
        )
    if condition is TestCondition.small_cube:
        return cfg.model_copy(update={"cube_edge": 0.5 * cfg.cube_edge})
    return cfg


def trial_scene(
    spec: TrialSpec, cfg: RandomisationConfig, model: Optional[ArmModel] = None
) -> Scene:
    cfg = condition_config(cfg, spec.condition)
    return sample_scene(
        cfg,
        spec.scene_seed,
        cube_xy=cell_center(cfg, spec.cell_index),
        basket_side=spec.basket_side,
        model=model,
    )


class TrialOutcome(BaseModel):
    cell_index: int
    basket_side: BasketSide
    scene_seed: int
    condition: TestCondition = TestCondition.standard
    cube_vicinity: bool
    cube_grasped: bool
    full_task: bool
    steps: int
    min_distance: float

    @model_validator(mode="after")
    def check_ladder(self) -> "TrialOutcome":
        if (self.full_task and not self.cube_grasped) or (
            self.cube_grasped and not self.cube_vicinity
        ):
            raise ValueError("success categories must be nested: full => grasped => vicinity")
        return self


def _moving_camera(scene: Scene, t: float):
    eye = scene.camera.pose.translation.copy()
    eye[2] += MOVING_CAMERA_AMPLITUDE * math.sin(2.0 * math.pi * t / MOVING_CAMERA_PERIOD)
    return scene.camera.moved_to(eye)


def _dump_frame(frame_dir: Path, spec: TrialSpec, step: int, image: Image, camera, action):
    for name, color in (("cube", CUBE_MARKER), ("gripper", GRIPPER_MARKER)):
        if name in action.markers:
            image = overlay_marker(image, camera, action.markers[name], color)
    name = f"{spec.basket_side.value}_{spec.cell_index:02d}_{step:04d}.ppm"
    write_ppm(image, frame_dir / name)


def run_trial(
    spec: TrialSpec,
    model: Optional[ArmModel] = None,
    max_steps: int = MAX_STEPS,
    *,
    cfg: Optional[RandomisationConfig] = None,
    controller: Optional[Controller] = None,
    frame_dir: Optional[Union[str, Path]] = None,
) -> TrialOutcome:
    """Run one closed-loop trial; a timeout is a failed trial, not an error."""
    model = model or reference_arm()
    cfg = cfg or default_eval_config()
    controller = controller or resolve_controller(spec.controller)
    if controller.resolution and controller.resolution != cfg.image_resolution:
        cfg = cfg.model_copy(update={"image_resolution": controller.resolution})
    scene = trial_scene(spec, cfg, model)
    world = ArmWorld(scene, model)
    frames = Path(frame_dir) if frame_dir is not None else None
    if frames is not None:
        frames.mkdir(parents=True, exist_ok=True)

    def outcome(vicinity: bool, grasped: bool, full: bool, steps: int, distance: float):
        return TrialOutcome(
            cell_index=spec.cell_index,
            basket_side=spec.basket_side,
            scene_seed=spec.scene_seed,
            condition=spec.condition,
            cube_vicinity=vicinity,
            cube_grasped=grasped,
            full_task=full,
            steps=steps,
            min_distance=distance,
        )

    min_distance = world.tip_to_cube_distance()
    try:
        controller.reset(scene, world.model)
    except PlanningFailed as e:
        logger.warning("trial %s/%d: %s", spec.basket_side.value, spec.cell_index, e)
        return outcome(min_distance <= VICINITY_RADIUS, False, False, 0, min_distance)

    grasped = full = False
    step = 0
    while step < max_steps and not full:
        image = camera = None
        if controller.needs_image or frames is not None:
            camera = scene.camera
            if spec.condition is TestCondition.moving_camera:
                camera = _moving_camera(scene, step * CONTROL_PERIOD)
            image = render(
                world.current_scene(),
                world.joints,
                camera,
                model=model,
                gripper_aperture=world.gripper.aperture,
            )
        action = controller.act(image, world.joints.copy())
        if frames is not None:
            _dump_frame(frames, spec, step, image, camera, action)
        world.command_gripper(action.gripper)
        world.drive(action.velocities)
        step += 1
        min_distance = min(min_distance, world.tip_to_cube_distance())
        if world.attached and world.cube_lift() >= GRASP_LIFT:
            grasped = True
        full = world.cube_in_basket() and not world.attached

    logger.debug(
        "trial %s/%d: %d steps, min distance %.4f, grasped=%s, full=%s",
        spec.basket_side.value,
        spec.cell_index,
        step,
        min_distance,
        grasped,
        full,
    )
    return outcome(min_distance <= VICINITY_RADIUS, grasped, full, step, min_distance)


class TrialReport(BaseModel):
    controller: str
    condition: TestCondition = TestCondition.standard
    eval_seed: int
    outcomes: List[TrialOutcome]

    @field_validator("outcomes")
    @classmethod
    def sort_outcomes(cls, value: List[TrialOutcome]) -> List[TrialOutcome]:
        return sorted(value, key=lambda o: (o.basket_side.value, o.cell_index))

    def _percent(self, attribute: str) -> float:
        if not self.outcomes:
            return 0.0
        return 100.0 * sum(getattr(o, attribute) for o in self.outcomes) / len(self.outcomes)

    @computed_field
    @property
    def trials(self) -> int:
        return len(self.outcomes)

    @computed_field
    @property
    def cube_vicinity(self) -> float:
        return self._percent("cube_vicinity")

    @computed_field
    @property
    def cube_grasped(self) -> float:
        return self._percent("cube_grasped")

    @computed_field
    @property
    def full_task(self) -> float:
        return self._percent("full_task")

    def row(self) -> str:
        return f"{self.cube_vicinity:6.1f}% {self.cube_grasped:6.1f}% {self.full_task:6.1f}%"


def grid_specs(
    controller: str, eval_seed: int, condition: TestCondition = TestCondition.standard
) -> List[TrialSpec]:
    """16 cells for each basket side; scene seeds depend only on the trial's grid slot."""
    specs = []
    for side_index, side in enumerate((BasketSide.left, BasketSide.right)):
        for cell in range(GRID_CELLS * GRID_CELLS):
            index = side_index * GRID_CELLS * GRID_CELLS + cell
            specs.append(
                TrialSpec(cell, side, trial_seed(eval_seed, index), controller, condition)
            )
    return specs


def run_grid(
    controller: Union[str, Controller],
    model: Optional[ArmModel] = None,
    eval_seed: int = 0,
    *,
    cfg: Optional[RandomisationConfig] = None,
    condition: TestCondition = TestCondition.standard,
    max_steps: int = MAX_STEPS,
    workers: int = 1,
    frame_dir: Optional[Union[str, Path]] = None,
) -> TrialReport:
    """All 32 grid trials for one controller; workers apply to controller references only."""
    model = model or reference_arm()
    cfg = cfg or default_eval_config()
    reference = controller if isinstance(controller, str) else type(controller).__name__
    specs = grid_specs(reference, eval_seed, condition)
    run = functools.partial(
        run_trial, model=model, max_steps=max_steps, cfg=cfg, frame_dir=frame_dir
    )
    if not isinstance(controller, str):
        outcomes = [run(spec, controller=controller) for spec in specs]
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, specs))
    else:
        outcomes = [run(spec) for spec in specs]
    report = TrialReport(
        controller=reference, condition=condition, eval_seed=eval_seed, outcomes=outcomes
    )
    logger.info("%s on %s: %s", reference, condition.value, report.row())
    return report


# -- ablation matrix ---------------------------------------------------------------------


class MatrixConfig(BaseModel):
    """Which rows and test conditions an ablation run covers."""

    rows: Tuple[str, ...] = ROW_NAMES
    conditions: Tuple[TestCondition, ...] = (TestCondition.standard,)
    train_config: RandomisationConfig = Field(default_factory=RandomisationConfig)
    eval_config: RandomisationConfig = Field(default_factory=default_eval_config)
    seed: int = Field(default=0, ge=0)
    eval_seed: int = Field(default=1, ge=0)
    sweep: bool = True

    @field_validator("rows")
    @classmethod
    def check_rows(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = [row for row in value if row not in ROW_NAMES]
        if unknown:
            raise ValueError(f"unknown rows {unknown}; expected names from {ROW_NAMES}")
        if not value:
            raise ValueError("at least one row is required")
        return value


class AblationRow(BaseModel):
    train: str
    test: TestCondition
    report: Optional[TrialReport] = None
    error: Optional[str] = None


class SweepPoint(BaseModel):
    frames: int
    episodes: int
    steps: int = 0
    report: Optional[TrialReport] = None
    error: Optional[str] = None


class AblationResult(BaseModel):
    budget: BudgetConfig
    rows: List[AblationRow] = Field(default_factory=list)
    sweep: List[SweepPoint] = Field(default_factory=list)

    def row(self, train: str, test: TestCondition = TestCondition.standard) -> AblationRow:
        for row in self.rows:
            if row.train == train and row.test is test:
                return row
        raise KeyError((train, test))


def _train_switch(row: str) -> str:
    return "full" if row in NET_ABLATIONS else row


@dataclass
class _Pipeline:
    matrix: MatrixConfig
    budget: BudgetConfig
    workdir: Path
    model: ArmModel

    def net_config(self, row: str) -> NetConfig:
        return NetConfig.for_profile(self.budget.profile, **NET_ABLATIONS.get(row, {}))

    def dataset(self, name: str, switch: str, episodes: int) -> Tuple[Path, int]:
        resolution = NetConfig.for_profile(self.budget.profile).input_resolution
        cfg = apply_ablation(self.matrix.train_config, switch).model_copy(
            update={"image_resolution": resolution}
        )
        path = self.workdir / f"{name}.rgds"
        summary = generate(cfg, episodes, self.budget.workers, self.matrix.seed, path)
        return path, summary.steps

    def evaluate(self, dataset: Path, row: str, conditions: Sequence[TestCondition]):
        result = train(
            dataset,
            self.net_config(row),
            TrainConfig(
                steps=self.budget.train_steps,
                batch_size=self.budget.batch_size,
                seed=self.matrix.seed,
            ),
            model=self.model,
        )
        checkpoint = self.workdir / f"{row}_{dataset.stem}.rgck"
        save_checkpoint(result.checkpoint, checkpoint)
        return [
            run_grid(
                str(checkpoint),
                self.model,
                self.matrix.eval_seed,
                cfg=self.matrix.eval_config,
                condition=condition,
                max_steps=self.budget.max_steps,
                workers=self.budget.workers,
            )
            for condition in conditions
        ]


def run_ablation_matrix(
    matrix_cfg: MatrixConfig,
    budget: BudgetConfig,
    workdir: Union[str, Path],
    model: Optional[ArmModel] = None,
) -> AblationResult:
    """Generate, train and evaluate every row; one failing row never stops the others."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    pipeline = _Pipeline(matrix_cfg, budget, workdir, model or reference_arm())
    result = AblationResult(budget=budget)
    datasets: Dict[str, Union[Path, RandgraspError]] = {}

    for row in matrix_cfg.rows:
        switch = _train_switch(row)
        logger.info("ablation row %s (data: %s)", row, switch)
        if switch not in datasets:
            try:
                datasets[switch], _ = pipeline.dataset(switch, switch, budget.episodes)
            except RandgraspError as e:
                datasets[switch] = e
        try:
            data = datasets[switch]
            if isinstance(data, RandgraspError):
                raise RandgraspError(f"generation failed: {data}")
            reports = pipeline.evaluate(data, row, matrix_cfg.conditions)
        except RandgraspError as e:
            logger.warning("ablation row %s failed: %s", row, e)
            result.rows.extend(
                AblationRow(train=row, test=condition, error=str(e))
                for condition in matrix_cfg.conditions
            )
            continue
        result.rows.extend(
            AblationRow(train=row, test=condition, report=report)
            for condition, report in zip(matrix_cfg.conditions, reports)
        )

    if matrix_cfg.sweep:
        for frames in budget.sweep_frames:
            episodes = max(1, math.ceil(frames / EXPECTED_EPISODE_STEPS))
            point = SweepPoint(frames=frames, episodes=episodes)
            try:
                path, point.steps = pipeline.dataset(f"sweep_{frames}", "full", episodes)
                (point.report,) = pipeline.evaluate(path, "full", (TestCondition.standard,))
            except RandgraspError as e:
                logger.warning("sweep point %d frames failed: %s", frames, e)
                point.error = str(e)
            result.sweep.append(point)
    return result


def format_table(result: AblationResult) -> str:
    """Text table with one line per (train, test) row."""
    header = (
        f"{'Train':<16} {'Test':<14} {'Cube vicinity':>14} {'Cube grasped':>13} "
        f"{'Full task':>10}"
    )
    lines = [header, "-" * len(header)]
    for row in result.rows:
        if row.report is None:
            cells = f"{'error: ' + (row.error or ''):>39}"
        else:
            r = row.report
            cells = f"{r.cube_vicinity:13.1f}% {r.cube_grasped:12.1f}% {r.full_task:9.1f}%"
        lines.append(f"{row.train:<16} {row.test.value:<14} {cells}")
    if result.sweep:
        lines.append("")
        lines.append(f"{'Frames':>8} {'Episodes':>9} {'Full task':>10}")
        for point in result.sweep:
            full = "error" if point.report is None else f"{point.report.full_task:9.1f}%"
            lines.append(f"{point.frames:>8} {point.episodes:>9} {full:>10}")
    return "\n".join(lines)
