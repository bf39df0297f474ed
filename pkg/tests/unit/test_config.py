import math

import pydantic
import pytest

from cli import CONFIG_DIR
from evalharness import default_eval_config
from randgrasp_config import (
    CONFIG_HEADER,
    BasketSide,
    InvalidConfigurationError,
    NetConfig,
    RandomisationConfig,
    TrainConfig,
    budget_for,
    config_digest,
    dump_document,
    load_document,
)
from scene import load_randomisation_config


def test_document_roundtrip():
    cfg = RandomisationConfig(cube_edge=0.05, basket_sides=(BasketSide.right,))
    assert load_document(dump_document(cfg), RandomisationConfig) == cfg


def test_document_header_required():
    body = dump_document(RandomisationConfig()).partition("\n")[2]
    with pytest.raises(InvalidConfigurationError):
        load_document("RANDGRASP-CFG v0\n" + body, RandomisationConfig)


def test_invalid_document_is_a_configuration_error():
    with pytest.raises(InvalidConfigurationError):
        load_document(f"{CONFIG_HEADER}\ncube_edge: -1\n", RandomisationConfig)


@pytest.mark.parametrize(
    "overrides",
    (
        {"light_intensity_range": (1.3, 0.7)},
        {"light_direction": (0.0, 0.0, 1.0)},
        {"distractor_count_range": (3, 1)},
        {"camera_position_box": (0.1, -0.1, 0.1)},
        {"basket_sides": ()},
    ),
)
def test_invalid_randomisation_rejected(overrides):
    with pytest.raises(pydantic.ValidationError):
        RandomisationConfig(**overrides)


def test_checked_in_configs_match_defaults():
    assert load_randomisation_config(CONFIG_DIR / "default.cfg") == RandomisationConfig()
    assert load_randomisation_config(CONFIG_DIR / "eval.cfg") == default_eval_config()


def test_digest_tracks_content():
    a = RandomisationConfig()
    assert config_digest(a) == config_digest(RandomisationConfig())
    assert config_digest(a) != config_digest(RandomisationConfig(cube_edge=0.05))
    assert len(config_digest(a)) == 32


@pytest.mark.parametrize(
    "profile, layers, final_size",
    (
        ("paper", 8, 1),
        ("desk", 6, 1),
        ("tiny", 2, 2),
    ),
)
def test_profiles(profile, layers, final_size):
    cfg = NetConfig.for_profile(profile)
    assert len(cfg.conv_channels) == layers
    assert cfg.spatial_sizes[-1] == final_size
    assert cfg.conv_kernels[-1] == 2
    assert all(k == 3 for k in cfg.conv_kernels[:-1])
    assert set(cfg.conv_strides) == {2}
    assert cfg.window == 4


def test_paper_profile_resolution():
    cfg = NetConfig.for_profile("paper")
    assert cfg.input_resolution == 256
    assert cfg.fc_hidden == 128
    assert cfg.conv_channels == (32, 32, 64, 64, 128, 128, 256, 256)


def test_profile_overrides():
    cfg = NetConfig.for_profile("desk", use_lstm=False)
    assert not cfg.use_lstm
    assert cfg.input_resolution == 64


def test_unknown_profile():
    with pytest.raises(InvalidConfigurationError):
        NetConfig.for_profile("laptop")


def test_too_small_input_rejected():
    with pytest.raises(pydantic.ValidationError):
        NetConfig(
            input_resolution=32,
            conv_channels=(8,) * 8,
            conv_kernels=(3,) * 7 + (2,),
            conv_strides=(2,) * 8,
        )


def test_train_config_defaults():
    cfg = TrainConfig()
    assert cfg.learning_rate == 1e-4
    with pytest.raises(pydantic.ValidationError):
        TrainConfig(learning_rate=0)


def test_budgets():
    assert budget_for("tiny").episodes == 2
    assert budget_for("desk").sweep_frames == (5000, 20000, 50000)
    with pytest.raises(InvalidConfigurationError):
        budget_for("huge")


def test_default_camera_fov():
    assert math.isclose(RandomisationConfig().camera_fov_y, math.radians(60.0))
