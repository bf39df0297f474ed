# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Episode recording, the RGDS1 dataset format and parallel generation.

File layout, little endian:

    header   64 bytes   magic "RGDS1\\0\\0\\0", version u32, width u32, height u32,
                        episode count u32, step count u64, config hash (32 bytes)
    index    24 bytes per episode: byte offset u64, step count u32, scene seed u64, flags u32
    steps    packed records of ``step_dtype(width, height)``
    trailer  SHA-256 of everything above
"""

import hashlib
import itertools
import logging
import os
import shutil
import struct
import tempfile
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel

from control import (
    ArmWorld,
    PlanningFailed,
    execute_episode,
    plan_episode,
)
from mathkin import ArmModel, reference_arm
from randgrasp_config import (
    JOINT_COUNT,
    GripperAction,
    RandgraspError,
    RandomisationConfig,
    StageId,
    config_digest,
)
from render import Image, render
from scene import sample_scene

logger = logging.getLogger(__name__)

MAGIC = b"RGDS1\x00\x00\x00"
VERSION = 1
HEADER = struct.Struct("<8sIIIIQ32s")
INDEX_ENTRY = struct.Struct("<QIQI")
CHECKSUM_SIZE = 32
FLAG_SUCCESS = 1

DATASET_STREAM = 0xDA7A
STALL_WINDOW = 200
STALL_MIN_SUCCESSES = 2
"""Fewer successes than this in the last STALL_WINDOW attempts (< 1%) stalls generation."""
CHUNK = 1 << 20


class CorruptDataset(RandgraspError):
    """Dataset file is truncated, has a bad header or fails its checksum."""

    pass


class InvariantViolation(RandgraspError):
    """An episode that must not be persisted was submitted."""

    pass


class GenerationStalled(RandgraspError):
    """The success rate of episode attempts collapsed."""

    pass


class IoFailure(RandgraspError):
    """Reading or writing a dataset file failed."""

    pass


def step_dtype(width: int, height: int) -> np.dtype:
    return np.dtype(
        [
            ("joint_angles", "<f8", (JOINT_COUNT,)),
            ("motor_velocities", "<f8", (JOINT_COUNT,)),
            ("cube_position", "<f8", (3,)),
            ("gripper_position", "<f8", (3,)),
            ("gripper_action", "u1"),
            ("stage_id", "u1"),
            ("image", "u1", (height, width, 3)),
        ]
    )


@dataclass(frozen=True, eq=False)
class StepRecord:
    image: Image
    joint_angles: np.ndarray
    motor_velocities: np.ndarray
    gripper_action: GripperAction
    cube_position: np.ndarray
    gripper_position: np.ndarray
    stage_id: StageId

    def __post_init__(self):
        for name in ("joint_angles", "motor_velocities", "cube_position", "gripper_position"):
            value = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(value)):
                raise InvariantViolation(f"{name} has non-finite entries")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "gripper_action", GripperAction(self.gripper_action))
        object.__setattr__(self, "stage_id", StageId(self.stage_id))


@dataclass
class EpisodeRecord:
    steps: List[StepRecord]
    scene_seed: int
    success: bool


@dataclass(frozen=True)
class DatasetSummary:
    episodes: int
    steps: int


class RenderingRecorder:
    """Renders the world at every recorded step."""

    def __init__(self):
        self.steps: List[StepRecord] = []

    def record(
        self, world: ArmWorld, velocities: np.ndarray, action: GripperAction, stage: StageId
    ) -> None:
        scene = world.current_scene()
        image = render(
            scene,
            world.joints,
            scene.camera,
            model=world.model,
            gripper_aperture=world.gripper.aperture,
        )
        self.steps.append(
            StepRecord(
                image=image,
                joint_angles=world.joints.copy(),
                motor_velocities=np.array(velocities, dtype=float),
                gripper_action=action,
                cube_position=world.cube_position.copy(),
                gripper_position=world.tip_pose.translation.copy(),
                stage_id=stage,
            )
        )


def _check_episode(episode: EpisodeRecord) -> None:
    if not episode.success:
        raise InvariantViolation(f"episode with seed {episode.scene_seed} was not successful")
    if not episode.steps:
        raise InvariantViolation(f"episode with seed {episode.scene_seed} has no steps")
    stages = [s.stage_id for s in episode.steps]
    if any(b < a for a, b in zip(stages, stages[1:])):
        raise InvariantViolation(f"episode with seed {episode.scene_seed} has decreasing stages")


def _episode_array(episode: EpisodeRecord, dtype: np.dtype, width: int, height: int) -> np.ndarray:
    arr = np.zeros(len(episode.steps), dtype=dtype)
    for i, step in enumerate(episode.steps):
        if (step.image.width, step.image.height) != (width, height):
            raise InvariantViolation("all images in a dataset must share one resolution")
        arr[i]["joint_angles"] = step.joint_angles
        arr[i]["motor_velocities"] = step.motor_velocities
        arr[i]["cube_position"] = step.cube_position
        arr[i]["gripper_position"] = step.gripper_position
        arr[i]["gripper_action"] = int(step.gripper_action)
        arr[i]["stage_id"] = int(step.stage_id)
        arr[i]["image"] = step.image.pixels
    return arr


class _HashingWriter:
    def __init__(self, fh: BinaryIO):
        self.fh = fh
        self.sha = hashlib.sha256()

    def write(self, data) -> int:
        self.sha.update(data)
        return self.fh.write(data)


def write_dataset(
    episodes: Iterable[EpisodeRecord],
    path: Union[str, Path],
    config_hash: bytes = bytes(CHECKSUM_SIZE),
) -> DatasetSummary:
    """Stream episodes into a dataset file, replacing ``path`` atomically on success."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    index: List[Tuple[int, int, int]] = []
    width = height = 0
    dtype = None
    total_steps = 0
    payload_path = tmp_path = None
    try:
        with tempfile.NamedTemporaryFile(
            dir=directory, prefix=f".{path.name}.", suffix=".steps", delete=False
        ) as payload:
            payload_path = Path(payload.name)
            offset = 0
            for episode in episodes:
                _check_episode(episode)
                if dtype is None:
                    first = episode.steps[0].image
                    width, height = first.width, first.height
                    dtype = step_dtype(width, height)
                arr = _episode_array(episode, dtype, width, height)
                payload.write(arr.tobytes())
                index.append((offset, len(arr), episode.scene_seed))
                offset += arr.nbytes
                logger.debug("wrote episode %d (%d steps)", len(index) - 1, len(arr))

        total_steps = sum(count for _, count, _ in index)
        base = HEADER.size + INDEX_ENTRY.size * len(index)
        with tempfile.NamedTemporaryFile(
            dir=directory, prefix=f".{path.name}.", suffix=".tmp", delete=False
        ) as out, open(payload_path, "rb") as src:
            tmp_path = Path(out.name)
            writer = _HashingWriter(out)
            writer.write(
                HEADER.pack(
                    MAGIC, VERSION, width, height, len(index), total_steps, config_hash
                )
            )
            for rel, count, seed in index:
                writer.write(INDEX_ENTRY.pack(base + rel, count, seed, FLAG_SUCCESS))
            shutil.copyfileobj(src, writer, CHUNK)
            out.write(writer.sha.digest())
            out.flush()
            os.fsync(out.fileno())
        os.replace(tmp_path, path)
    except OSError as e:
        raise IoFailure(f"could not write dataset {path}: {e}") from e
    finally:
        if payload_path is not None and payload_path.exists():
            payload_path.unlink()
        if tmp_path is not None and tmp_path.exists():
            tmp_path.unlink()
    logger.info("dataset %s: %d episodes, %d steps", path, len(index), total_steps)
    return DatasetSummary(len(index), total_steps)


class DatasetReader:
    """Validated read-only view over a dataset file."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        try:
            size = self.path.stat().st_size
            with open(self.path, "rb") as fh:
                self._validate(fh, size)
        except OSError as e:
            raise IoFailure(f"could not read dataset {self.path}: {e}") from e
        self.dtype = step_dtype(self.width, self.height)
        if self.step_count:
            self.steps = np.memmap(
                self.path,
                dtype=self.dtype,
                mode="r",
                offset=self._payload,
                shape=(self.step_count,),
            )
        else:
            self.steps = np.zeros(0, dtype=self.dtype)

    def _validate(self, fh: BinaryIO, size: int) -> None:
        if size < HEADER.size + CHECKSUM_SIZE:
            raise CorruptDataset(f"{self.path}: file too short ({size} bytes)")
        magic, version, width, height, episodes, steps, config_hash = HEADER.unpack(
            fh.read(HEADER.size)
        )
        if magic != MAGIC or version != VERSION:
            raise CorruptDataset(f"{self.path}: not an RGDS1 dataset")
        record = step_dtype(width, height).itemsize
        expected = HEADER.size + INDEX_ENTRY.size * episodes + record * steps + CHECKSUM_SIZE
        if size != expected:
            raise CorruptDataset(f"{self.path}: size {size} does not match header ({expected})")
        fh.seek(0)
        sha = hashlib.sha256()
        remaining = size - CHECKSUM_SIZE
        while remaining:
            chunk = fh.read(min(CHUNK, remaining))
            if not chunk:
                raise CorruptDataset(f"{self.path}: unexpected end of file")
            sha.update(chunk)
            remaining -= len(chunk)
        if fh.read(CHECKSUM_SIZE) != sha.digest():
            raise CorruptDataset(f"{self.path}: checksum mismatch")

        fh.seek(HEADER.size)
        self._payload = HEADER.size + INDEX_ENTRY.size * episodes
        index = [INDEX_ENTRY.unpack(fh.read(INDEX_ENTRY.size)) for _ in range(episodes)]
        starts, counts, seeds = [], [], []
        cursor = self._payload
        for offset, count, seed, flags in index:
            if offset != cursor or not flags & FLAG_SUCCESS:
                raise CorruptDataset(f"{self.path}: inconsistent index table")
            starts.append((offset - self._payload) // record)
            counts.append(count)
            seeds.append(seed)
            cursor += count * record
        if sum(counts) != steps:
            raise CorruptDataset(f"{self.path}: index does not add up to {steps} steps")

        self.width, self.height = width, height
        self.episode_count, self.step_count = episodes, steps
        self.config_hash = config_hash
        self.episode_starts = np.array(starts, dtype=np.int64)
        self.episode_lengths = np.array(counts, dtype=np.int64)
        self.scene_seeds = seeds

    def __enter__(self) -> "DatasetReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self.steps = np.zeros(0, dtype=self.dtype)

    def __len__(self) -> int:
        return self.episode_count

    def episode_range(self, index: int) -> Tuple[int, int]:
        start = int(self.episode_starts[index])
        return start, start + int(self.episode_lengths[index])

    def episode_of_step(self, step: np.ndarray) -> np.ndarray:
        """Episode index of each global step index."""
        return np.searchsorted(self.episode_starts, step, side="right") - 1

    def episode(self, index: int) -> EpisodeRecord:
        start, stop = self.episode_range(index)
        rows = self.steps[start:stop]
        steps = [
            StepRecord(
                image=Image(self.width, self.height, np.array(row["image"])),
                joint_angles=row["joint_angles"],
                motor_velocities=row["motor_velocities"],
                gripper_action=int(row["gripper_action"]),
                cube_position=row["cube_position"],
                gripper_position=row["gripper_position"],
                stage_id=int(row["stage_id"]),
            )
            for row in rows
        ]
        return EpisodeRecord(steps, self.scene_seeds[index], success=True)

    def __iter__(self) -> Iterator[EpisodeRecord]:
        for index in range(self.episode_count):
            yield self.episode(index)


def episode_seed(master_seed: int, index: int) -> int:
    """Counter-based split of the master seed."""
    sequence = np.random.SeedSequence(master_seed, spawn_key=(DATASET_STREAM, index))
    return int(sequence.generate_state(2, np.uint64)[0] >> np.uint64(1))


@dataclass
class AttemptResult:
    index: int
    seed: int
    episode: Optional[EpisodeRecord] = None
    reason: str = ""


def run_attempt(
    cfg: RandomisationConfig, master_seed: int, index: int, model: Optional[ArmModel] = None
) -> AttemptResult:
    """Sample, plan and execute one episode; failures are reported, not raised."""
    model = model or reference_arm()
    seed = episode_seed(master_seed, index)
    scene = sample_scene(cfg, seed, model=model)
    recorder = RenderingRecorder()
    try:
        outcome = execute_episode(plan_episode(scene, model), scene, model, recorder)
    except PlanningFailed as e:
        return AttemptResult(index, seed, reason=str(e))
    if not outcome.success:
        return AttemptResult(index, seed, reason="cube not in basket")
    return AttemptResult(index, seed, EpisodeRecord(recorder.steps, seed, success=True))


def _run_attempt_packed(args) -> AttemptResult:
    cfg_json, master_seed, index = args
    return run_attempt(RandomisationConfig.model_validate_json(cfg_json), master_seed, index)


def iter_attempts(
    cfg: RandomisationConfig, master_seed: int, workers: int
) -> Iterator[AttemptResult]:
    """Attempts in index order; parallel workers run ahead by a bounded window."""
    if workers <= 1:
        for index in itertools.count():
            yield run_attempt(cfg, master_seed, index)
        return
    cfg_json = cfg.model_dump_json()
    counter = itertools.count()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        while True:
            batch = [(cfg_json, master_seed, next(counter)) for _ in range(2 * workers)]
            yield from pool.map(_run_attempt_packed, batch)


def _successes(
    cfg: RandomisationConfig, n_episodes: int, workers: int, master_seed: int, stats: Dict
) -> Iterator[EpisodeRecord]:
    window = deque(maxlen=STALL_WINDOW)
    kept = 0
    attempts = iter_attempts(cfg, master_seed, workers)
    try:
        for result in attempts:
            stats["attempts"] += 1
            window.append(result.episode is not None)
            if result.episode is None:
                stats["discarded"] += 1
                logger.debug("attempt %d discarded: %s", result.index, result.reason)
            else:
                kept += 1
                yield result.episode
                if kept % 10 == 0:
                    logger.info("generated %d/%d episodes", kept, n_episodes)
                if kept == n_episodes:
                    return
            if len(window) == STALL_WINDOW and sum(window) < STALL_MIN_SUCCESSES:
                raise GenerationStalled(
                    f"{sum(window)} successes in the last {STALL_WINDOW} attempts"
                )
    finally:
        attempts.close()


@dataclass
class GenerationSummary:
    episodes: int
    steps: int
    attempts: int
    discarded: int
    stats: Dict[str, int] = field(default_factory=dict)


def generate(
    cfg: RandomisationConfig,
    n_episodes: int,
    workers: int,
    master_seed: int,
    path: Union[str, Path],
) -> GenerationSummary:
    """Persist the first ``n_episodes`` successful attempts in attempt-index order."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    counters = {"attempts": 0, "discarded": 0}
    summary = write_dataset(
        _successes(cfg, n_episodes, workers, master_seed, counters),
        path,
        config_hash=config_digest(cfg),
    )
    if counters["discarded"]:
        logger.warning(
            "discarded %d of %d attempts", counters["discarded"], counters["attempts"]
        )
    return GenerationSummary(
        summary.episodes, summary.steps, counters["attempts"], counters["discarded"]
    )


class DatasetStats(BaseModel):
    """Single-pass dataset statistics; also the normalization source for training."""

    episodes: int
    steps: int
    action_counts: Dict[str, int]
    velocity_mean: List[float]
    velocity_std: List[float]
    cube_position_mean: List[float]
    cube_position_std: List[float]
    gripper_position_mean: List[float]
    gripper_position_std: List[float]
    episode_length_histogram: Dict[int, int]


class RunningMoments:
    """Per-dimension mean and population variance merged batch by batch."""

    def __init__(self, dims: int):
        self.count = 0
        self.mean = np.zeros(dims)
        self.m2 = np.zeros(dims)

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=float)
        n = len(batch)
        if n == 0:
            return
        mean = batch.mean(axis=0)
        m2 = ((batch - mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + m2 + delta**2 * (self.count * n / total)
        self.count = total

    @property
    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / self.count)


def stats_from_reader(reader: DatasetReader) -> DatasetStats:
    velocity = RunningMoments(JOINT_COUNT)
    cube = RunningMoments(3)
    gripper = RunningMoments(3)
    actions = np.zeros(len(GripperAction), dtype=np.int64)
    histogram: Dict[int, int] = {}
    for index in range(reader.episode_count):
        start, stop = reader.episode_range(index)
        rows = reader.steps[start:stop]
        velocity.update(rows["motor_velocities"])
        cube.update(rows["cube_position"])
        gripper.update(rows["gripper_position"])
        actions += np.bincount(rows["gripper_action"], minlength=len(GripperAction))
        histogram[stop - start] = histogram.get(stop - start, 0) + 1
    return DatasetStats(
        episodes=reader.episode_count,
        steps=reader.step_count,
        action_counts={a.name.lower(): int(actions[a]) for a in GripperAction},
        velocity_mean=velocity.mean.tolist(),
        velocity_std=velocity.std.tolist(),
        cube_position_mean=cube.mean.tolist(),
        cube_position_std=cube.std.tolist(),
        gripper_position_mean=gripper.mean.tolist(),
        gripper_position_std=gripper.std.tolist(),
        episode_length_histogram=dict(sorted(histogram.items())),
    )


def dataset_stats(path: Union[str, Path]) -> DatasetStats:
    with DatasetReader(path) as reader:
        return stats_from_reader(reader)


def dump_stats(stats: DatasetStats) -> str:
    return yaml.safe_dump(stats.model_dump(mode="json"), sort_keys=False)
