import numpy as np
import pytest

from dataset import (
    HEADER,
    CorruptDataset,
    DatasetReader,
    InvariantViolation,
    RunningMoments,
    StepRecord,
    dataset_stats,
    dump_stats,
    episode_seed,
    write_dataset,
)
from randgrasp_config import GripperAction, StageId
from render import Image
from tests.unit.helpers import synthetic_episode, synthetic_step


@pytest.fixture
def episodes():
    rng = np.random.default_rng(0)
    return [synthetic_episode(rng, length, seed) for seed, length in ((7, 10), (8, 6), (9, 12))]


@pytest.fixture
def written(tmp_path, episodes):
    path = tmp_path / "demo.rgds"
    write_dataset(episodes, path, config_hash=b"\x01" * 32)
    return path


def test_roundtrip(written, episodes):
    with DatasetReader(written) as reader:
        assert len(reader) == 3
        assert reader.step_count == 28
        assert (reader.width, reader.height) == (4, 4)
        assert reader.config_hash == b"\x01" * 32
        assert reader.scene_seeds == [7, 8, 9]
        for original, loaded in zip(episodes, reader):
            assert loaded.scene_seed == original.scene_seed
            for a, b in zip(original.steps, loaded.steps):
                assert np.array_equal(a.image.pixels, b.image.pixels)
                assert np.array_equal(a.joint_angles, b.joint_angles)
                assert np.array_equal(a.motor_velocities, b.motor_velocities)
                assert a.gripper_action is b.gripper_action
                assert a.stage_id is b.stage_id


def test_episode_ranges(written):
    with DatasetReader(written) as reader:
        assert reader.episode_range(1) == (10, 16)
        assert reader.episode_of_step(np.array([0, 9, 10, 27])).tolist() == [0, 0, 1, 2]


def test_empty_dataset(tmp_path):
    path = tmp_path / "empty.rgds"
    summary = write_dataset([], path)
    assert (summary.episodes, summary.steps) == (0, 0)
    with DatasetReader(path) as reader:
        assert len(reader) == 0
        assert list(reader) == []


@pytest.mark.parametrize("cut", (1, 33, HEADER.size + 3))
def test_truncated_file_is_rejected(written, cut):
    data = written.read_bytes()
    written.write_bytes(data[:-cut])
    with pytest.raises(CorruptDataset):
        DatasetReader(written)


def test_flipped_byte_is_rejected(written):
    data = bytearray(written.read_bytes())
    data[len(data) // 2] ^= 0xFF
    written.write_bytes(bytes(data))
    with pytest.raises(CorruptDataset, match="checksum"):
        DatasetReader(written)


def test_bad_magic_is_rejected(written):
    data = bytearray(written.read_bytes())
    data[0:5] = b"NOPE!"
    written.write_bytes(bytes(data))
    with pytest.raises(CorruptDataset):
        DatasetReader(written)


def test_unsuccessful_episode_is_never_written(tmp_path, episodes):
    path = tmp_path / "bad.rgds"
    episodes[1].success = False
    with pytest.raises(InvariantViolation):
        write_dataset(episodes, path)
    assert not path.exists()
    assert list(tmp_path.iterdir()) == []


def test_decreasing_stages_are_rejected(tmp_path, episodes):
    rng = np.random.default_rng(1)
    episodes[0].steps.append(synthetic_step(rng, stage=StageId.LIFT))
    with pytest.raises(InvariantViolation):
        write_dataset(episodes, tmp_path / "bad.rgds")


def test_mixed_resolutions_are_rejected(tmp_path, episodes):
    rng = np.random.default_rng(2)
    episodes[2].steps.append(synthetic_step(rng, GripperAction.NO_OP, StageId.RELEASE, size=5))
    with pytest.raises(InvariantViolation):
        write_dataset(episodes, tmp_path / "bad.rgds")


def test_non_finite_step_is_rejected():
    rng = np.random.default_rng(3)
    with pytest.raises(InvariantViolation):
        StepRecord(
            image=Image(4, 4, np.zeros((4, 4, 3))),
            joint_angles=np.full(6, np.nan),
            motor_velocities=np.zeros(6),
            gripper_action=GripperAction.NO_OP,
            cube_position=rng.uniform(size=3),
            gripper_position=rng.uniform(size=3),
            stage_id=StageId.LIFT,
        )


def test_stats_match_independent_recomputation(written, episodes):
    report = dataset_stats(written)
    velocities = np.array([s.motor_velocities for e in episodes for s in e.steps])
    assert report.episodes == 3
    assert report.steps == 28
    assert np.allclose(report.velocity_mean, velocities.mean(axis=0), atol=1e-9)
    assert np.allclose(report.velocity_std, velocities.std(axis=0), atol=1e-9)
    assert report.action_counts == {"open": 3, "close": 3, "no_op": 22}
    assert report.episode_length_histogram == {6: 1, 10: 1, 12: 1}
    assert "action_counts" in dump_stats(report)


def test_running_moments_merge_batches():
    rng = np.random.default_rng(4)
    data = rng.normal(3.0, 2.0, size=(1000, 4))
    moments = RunningMoments(4)
    for chunk in np.array_split(data, 7):
        moments.update(chunk)
    moments.update(np.zeros((0, 4)))
    assert moments.count == 1000
    assert np.allclose(moments.mean, data.mean(axis=0), atol=1e-12)
    assert np.allclose(moments.std, data.std(axis=0), atol=1e-12)


def test_episode_seeds_are_a_stable_split():
    seeds = [episode_seed(1234, i) for i in range(100)]
    assert seeds == [episode_seed(1234, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert all(0 <= s < 2**63 for s in seeds)
    assert episode_seed(1234, 0) != episode_seed(1235, 0)
