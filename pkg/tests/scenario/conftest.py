import pytest

from dataset import generate
from evalharness import default_eval_config
from net import save_checkpoint, train
from randgrasp_config import NetConfig, RandomisationConfig, TrainConfig
from tests.scenario.helpers import EPISODES


@pytest.fixture(scope="session")
def tiny_net():
    return NetConfig.for_profile("tiny")


@pytest.fixture(scope="session")
def generation_config(tiny_net):
    return RandomisationConfig(image_resolution=tiny_net.input_resolution)


@pytest.fixture(scope="session")
def eval_config():
    return default_eval_config().model_copy(update={"image_resolution": 32})


@pytest.fixture(scope="session")
def demo_dataset(tmp_path_factory, generation_config):
    """A few rendered demonstrations at the tiny network's resolution."""
    path = tmp_path_factory.mktemp("data") / "demo.rgds"
    summary = generate(generation_config, EPISODES, 1, 0, path)
    assert summary.episodes == EPISODES
    return path


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, demo_dataset, tiny_net):
    result = train(demo_dataset, tiny_net, TrainConfig(steps=5, batch_size=4, seed=2))
    path = tmp_path_factory.mktemp("model") / "tiny.rgck"
    save_checkpoint(result.checkpoint, path)
    return path
