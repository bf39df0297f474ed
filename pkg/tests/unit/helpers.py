import numpy as np

from dataset import EpisodeRecord, StepRecord, write_dataset
from mathkin import reference_arm
from net import Normalizer
from randgrasp_config import GripperAction, StageId
from render import Image


def synthetic_step(rng, action=GripperAction.NO_OP, stage=StageId.REACH_ABOVE_CUBE, size=4):
    return StepRecord(
        image=Image(size, size, rng.integers(0, 256, size=(size, size, 3))),
        joint_angles=rng.normal(size=6),
        motor_velocities=rng.normal(size=6),
        gripper_action=action,
        cube_position=rng.uniform(size=3),
        gripper_position=rng.uniform(size=3),
        stage_id=stage,
    )


def synthetic_episode(rng, length, seed, size=4):
    """Reach, one close, lift, one open; ``length`` steps in total."""
    grasp = length // 2
    steps = [synthetic_step(rng, size=size) for _ in range(grasp)]
    steps.append(synthetic_step(rng, GripperAction.CLOSE, StageId.CLOSE_GRIPPER, size))
    for _ in range(length - grasp - 2):
        steps.append(synthetic_step(rng, stage=StageId.LIFT, size=size))
    steps.append(synthetic_step(rng, GripperAction.OPEN, StageId.RELEASE, size))
    return EpisodeRecord(steps, seed, success=True)


def write_synthetic_dataset(path, lengths=(10, 6, 12), size=4, seed=0):
    rng = np.random.default_rng(seed)
    episodes = [synthetic_episode(rng, n, 7 + i, size) for i, n in enumerate(lengths)]
    write_dataset(episodes, path)
    return episodes


def reference_normalizer():
    arm = reference_arm()
    return Normalizer(
        joint_low=arm.joint_limits[:, 0].tolist(),
        joint_high=arm.joint_limits[:, 1].tolist(),
        velocity_mean=[0.1] * 6,
        velocity_std=[0.5] * 6,
        cube_mean=[0.4, 0.0, 0.03],
        cube_std=[0.1, 0.1, 0.01],
        gripper_mean=[0.3, 0.0, 0.2],
        gripper_std=[0.1, 0.2, 0.1],
    )
