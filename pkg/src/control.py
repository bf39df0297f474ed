# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""PID velocity execution, the arm world and the scripted five-stage demonstrator."""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from mathkin import (
    GRASP_ORIENTATION,
    ArmModel,
    CartesianPath,
    NoConvergence,
    Transform,
    forward_kinematics,
    path_to_joint_trajectory,
    rotation_distance,
)
from randgrasp_config import (
    JOINT_COUNT,
    GripperAction,
    RandgraspError,
    StageId,
    VelocityProfile,
)
from render import Aperture
from scene import TABLE_HEIGHT, Scene

logger = logging.getLogger(__name__)

CONTROL_PERIOD = 0.05
APPROACH_OFFSET = 0.12
LIFT_HEIGHT = 0.10
DROP_CLEARANCE = 0.15
GRASP_RADIUS = 0.02
LINEAR_SPEED = 0.09
ANGULAR_SPEED = 0.6
MIN_SEGMENT_DURATION = 0.5
MOTOR_TIME_CONSTANT = 0.05
MOTOR_SUBSTEPS = 10


class PlanningFailed(RandgraspError):
    """A scripted segment could not be converted into a joint trajectory."""

    pass


class PidGains(BaseModel):
    """Per-joint PID gains on velocity error."""

    kp: Tuple[float, float, float, float, float, float] = (2.0,) * JOINT_COUNT
    ki: Tuple[float, float, float, float, float, float] = (0.5,) * JOINT_COUNT
    kd: Tuple[float, float, float, float, float, float] = (0.0,) * JOINT_COUNT
    integral_clamp: float = Field(default=0.5, ge=0)

    @field_validator("kp", "ki", "kd", mode="before")
    @classmethod
    def broadcast_scalar(cls, value):
        if isinstance(value, (int, float)):
            return (float(value),) * JOINT_COUNT
        return value

    @field_validator("kp", "ki", "kd")
    @classmethod
    def check_non_negative(cls, value):
        if any(g < 0 for g in value):
            raise ValueError("PID gains must be non-negative")
        return value


@dataclass
class PidMemory:
    """Integral and previous-error memory carried between PID steps."""

    integral: np.ndarray = field(default_factory=lambda: np.zeros(JOINT_COUNT))
    prev_error: Optional[np.ndarray] = None

    def reset(self) -> None:
        self.integral = np.zeros(JOINT_COUNT)
        self.prev_error = None


def pid_step(
    gains: PidGains,
    target_v: np.ndarray,
    actual_v: np.ndarray,
    memory: PidMemory,
    dt: float,
) -> np.ndarray:
    """Velocity-error PID law; the integral is clamped to +/- integral_clamp."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    error = np.asarray(target_v, dtype=float) - np.asarray(actual_v, dtype=float)
    memory.integral = np.clip(
        memory.integral + error * dt, -gains.integral_clamp, gains.integral_clamp
    )
    derivative = (
        np.zeros(JOINT_COUNT) if memory.prev_error is None else (error - memory.prev_error) / dt
    )
    memory.prev_error = error
    return (
        np.asarray(gains.kp) * error
        + np.asarray(gains.ki) * memory.integral
        + np.asarray(gains.kd) * derivative
    )


def first_order_motor(
    actual_v: np.ndarray,
    command: np.ndarray,
    dt: float,
    time_constant: float = MOTOR_TIME_CONSTANT,
    substeps: int = MOTOR_SUBSTEPS,
) -> np.ndarray:
    """Motor velocity relaxing towards ``command``; returns velocity after each sub-step."""
    h = dt / substeps
    out = np.empty((substeps, len(actual_v)))
    v = np.asarray(actual_v, dtype=float)
    for k in range(substeps):
        v = v + (command - v) * (h / time_constant)
        out[k] = v
    return out


@dataclass(frozen=True, eq=False)
class StagePlan:
    """One scripted stage; motion stages carry a waypoint, gripper stages a command."""

    stage_id: StageId
    waypoint: Optional[Transform] = None
    gripper_command: GripperAction = GripperAction.NO_OP
    descend_to: Optional[Transform] = None

    def targets(self) -> List[Transform]:
        if self.waypoint is None:
            return []
        return [self.waypoint] + ([self.descend_to] if self.descend_to is not None else [])


@dataclass
class GripperState:
    aperture: Aperture = Aperture.open
    attached_object: Optional[str] = None

    def __post_init__(self):
        if self.attached_object is not None and self.aperture is not Aperture.closed:
            raise ValueError("an object can only be attached to a closed gripper")


def _pose(xyz) -> Transform:
    return Transform(GRASP_ORIENTATION, xyz)


def plan_episode(scene: Scene, model: Optional[ArmModel] = None) -> List[StagePlan]:
    """The fixed five-stage pick-and-drop script for this scene."""
    if scene.cube is None or scene.basket is None:
        raise PlanningFailed("scene needs exactly one cube and one basket")
    cube = scene.cube.position
    top = cube[2] + scene.cube.half
    opening = scene.basket.opening_center
    return [
        StagePlan(
            StageId.REACH_ABOVE_CUBE,
            waypoint=_pose((cube[0], cube[1], top + APPROACH_OFFSET)),
            descend_to=_pose(cube),
        ),
        StagePlan(StageId.CLOSE_GRIPPER, gripper_command=GripperAction.CLOSE),
        StagePlan(StageId.LIFT, waypoint=_pose((cube[0], cube[1], cube[2] + LIFT_HEIGHT))),
        StagePlan(
            StageId.TRANSPORT_TO_BASKET,
            waypoint=_pose((opening[0], opening[1], opening[2] + DROP_CLEARANCE)),
        ),
        StagePlan(StageId.RELEASE, gripper_command=GripperAction.OPEN),
    ]


def segment_duration(start: Transform, end: Transform) -> float:
    distance = float(np.linalg.norm(end.translation - start.translation))
    angle = rotation_distance(start.rotation, end.rotation)
    return max(distance / LINEAR_SPEED, angle / ANGULAR_SPEED, MIN_SEGMENT_DURATION)


@dataclass(frozen=True, eq=False)
class ScriptStep:
    """Joint state at one control period with its labels."""

    angles: np.ndarray
    velocities: np.ndarray
    action: GripperAction
    stage: StageId


def script_episode(
    plans: List[StagePlan], start_joints: np.ndarray, model: ArmModel, dt: float = CONTROL_PERIOD
) -> Tuple[List[ScriptStep], np.ndarray]:
    """Expand plans into per-period joint states plus the final joint angles.

    Each motion segment contributes all but its final state, so consecutive segments join
    without duplicated frames; gripper stages contribute a single stationary frame.
    """
    q = np.asarray(start_joints, dtype=float)
    steps: List[ScriptStep] = []
    zero = np.zeros(JOINT_COUNT)
    for plan in plans:
        if plan.waypoint is None:
            steps.append(ScriptStep(q, zero, plan.gripper_command, plan.stage_id))
            continue
        for target in plan.targets():
            start = forward_kinematics(model, q)
            path = CartesianPath(
                start, target, segment_duration(start, target), VelocityProfile.trapezoidal
            )
            try:
                trajectory = path_to_joint_trajectory(model, path, q, dt)
            except NoConvergence as e:
                raise PlanningFailed(f"stage {plan.stage_id.name}: {e}") from e
            steps.extend(
                ScriptStep(s.angles, s.velocities, GripperAction.NO_OP, plan.stage_id)
                for s in trajectory[:-1]
            )
            q = trajectory[-1].angles
    return steps, q


class ArmWorld:
    """Arm, gripper and cube state shared by scripted playback and closed-loop trials."""

    def __init__(self, scene: Scene, model: ArmModel, gains: Optional[PidGains] = None):
        self.scene = scene
        self.model = scene.arm_model(model)
        self.gains = gains or PidGains()
        self.joints = np.array(scene.start_joints, dtype=float)
        self.velocities = np.zeros(JOINT_COUNT)
        self.gripper = GripperState()
        self.cube_position = None if scene.cube is None else np.array(scene.cube.position)
        self._attach_offset: Optional[np.ndarray] = None
        self._pid = PidMemory()
        self._tip = forward_kinematics(self.model, self.joints)

    @property
    def tip_pose(self) -> Transform:
        return self._tip

    @property
    def attached(self) -> bool:
        return self.gripper.attached_object is not None

    @property
    def cube_offset(self) -> Optional[np.ndarray]:
        """Cube center in the tool frame while attached."""
        return None if self._attach_offset is None else self._attach_offset.copy()

    def _moved(self) -> None:
        self._tip = forward_kinematics(self.model, self.joints)
        if self._attach_offset is not None:
            self.cube_position = self._tip.apply(self._attach_offset)

    def set_joints(self, angles: np.ndarray) -> None:
        """Kinematic playback: place the arm exactly."""
        self.joints = np.array(angles, dtype=float)
        self._moved()

    def drive(self, target_velocities: np.ndarray, dt: float = CONTROL_PERIOD) -> None:
        """Feed-forward plus PID command through the motor model, integrated over ``dt``."""
        target = np.asarray(target_velocities, dtype=float)
        command = target + pid_step(self.gains, target, self.velocities, self._pid, dt)
        h = dt / MOTOR_SUBSTEPS
        q = self.joints
        for v in first_order_motor(self.velocities, command, dt):
            q = q + v * h
        clamped = self.model.clamp(q)
        velocities = v.copy()
        velocities[clamped != q] = 0.0
        self.velocities = velocities
        self.joints = clamped
        self._moved()

    def tip_to_cube_distance(self) -> float:
        if self.cube_position is None:
            return math.inf
        return float(np.linalg.norm(self._tip.translation - self.cube_position))

    def command_gripper(self, action: GripperAction) -> None:
        """Instantaneous gripper event; close attaches a cube within the grasp radius."""
        if action is GripperAction.CLOSE:
            self.gripper.aperture = Aperture.closed
            if not self.attached and self.tip_to_cube_distance() <= GRASP_RADIUS:
                self.gripper.attached_object = "cube"
                self._attach_offset = self._tip.inverse().apply(self.cube_position)
                logger.debug("cube attached at %s", self.cube_position.round(4))
        elif action is GripperAction.OPEN:
            self.gripper.aperture = Aperture.open
            if self.attached:
                self.gripper.attached_object = None
                self._attach_offset = None
                self._drop()

    def support_height(self, xy: np.ndarray, below: float) -> float:
        """Highest support surface under ``xy`` that is not above ``below``."""
        heights = [TABLE_HEIGHT]
        basket = self.scene.basket
        if basket is not None:
            if basket.inside_interior_xy(xy):
                heights.append(basket.floor_height)
            elif basket.inside_footprint_xy(xy):
                heights.append(basket.rim_height)
        heights.extend(d.top_height for d in self.scene.distractors if d.covers_xy(xy))
        return max((h for h in heights if h <= below + 1e-9), default=TABLE_HEIGHT)

    def _drop(self) -> None:
        half = self.scene.cube.half
        # a cube pushed through the table resurfaces on it
        bottom = max(self.cube_position[2] - half, TABLE_HEIGHT)
        support = self.support_height(self.cube_position[:2], bottom)
        self.cube_position = np.array(
            [self.cube_position[0], self.cube_position[1], support + half]
        )
        logger.debug("cube dropped to %s", self.cube_position.round(4))

    def cube_in_basket(self) -> bool:
        """Containment predicate on the cube center and extent."""
        if self.cube_position is None or self.scene.basket is None:
            return False
        return self.scene.basket.contains(self.cube_position, self.scene.cube.half)

    def cube_lift(self) -> float:
        """Height of the cube above its starting rest position."""
        if self.cube_position is None:
            return 0.0
        return float(self.cube_position[2] - self.scene.cube.position[2])

    def current_scene(self) -> Scene:
        if self.cube_position is None:
            return self.scene
        return self.scene.with_cube_position(self.cube_position)


class EpisodeRecorder(Protocol):
    """Receives one call per recorded control period."""

    def record(
        self, world: ArmWorld, velocities: np.ndarray, action: GripperAction, stage: StageId
    ) -> None:
        ...


@dataclass
class EpisodeOutcome:
    success: bool
    steps: int
    final_cube_position: Optional[np.ndarray]
    final_joints: np.ndarray


def execute_episode(
    plans: List[StagePlan],
    scene: Scene,
    model: ArmModel,
    recorder: EpisodeRecorder,
    dt: float = CONTROL_PERIOD,
) -> EpisodeOutcome:
    """Play the script kinematically, recording each step before its gripper event."""
    world = ArmWorld(scene, model)
    steps, final = script_episode(plans, scene.start_joints, world.model, dt)
    for step in steps:
        world.set_joints(step.angles)
        recorder.record(world, step.velocities, step.action, step.stage)
        world.command_gripper(step.action)
    world.set_joints(final)
    success = world.cube_in_basket() and not world.attached
    logger.debug("episode finished after %d steps, success=%s", len(steps), success)
    return EpisodeOutcome(
        success=success,
        steps=len(steps),
        final_cube_position=None if world.cube_position is None else world.cube_position.copy(),
        final_joints=world.joints.copy(),
    )


def with_stage(plans: List[StagePlan], stage: StageId, **changes) -> List[StagePlan]:
    """Copy of ``plans`` with one stage's fields replaced."""
    return [dataclasses.replace(p, **changes) if p.stage_id is stage else p for p in plans]
