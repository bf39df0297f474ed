# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Configuration schemas, enumerations and shared errors for the randgrasp engine."""

import hashlib
import logging
import math
from enum import Enum, IntEnum, unique
from typing import Annotated, Any, Dict, Optional, Tuple, Type, TypeVar

import pydantic
import yaml
from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

logger = logging.getLogger(__name__)

ENGINE_VERSION = "0.1"
CONFIG_HEADER = "RANDGRASP-CFG v1"

JOINT_COUNT = 6
"""The controller emits one velocity per revolute joint."""

RGB = Tuple[float, float, float]
Vec3 = Tuple[float, float, float]

# "colours close to the real world", used as distribution means and by the baseline row.
REAL_WORLD_CUBE = (0.80, 0.12, 0.10)
REAL_WORLD_BASKET = (0.20, 0.30, 0.65)
REAL_WORLD_ARM = (0.18, 0.18, 0.20)
REAL_WORLD_TABLE = (0.55, 0.42, 0.30)
REAL_WORLD_BACKGROUND = (0.80, 0.80, 0.78)


def _check_interval(value: Tuple[float, float]) -> Tuple[float, float]:
    lo, hi = value
    if lo > hi:
        raise ValueError(f"interval lower bound {lo} exceeds upper bound {hi}")
    return value


Interval = Annotated[Tuple[float, float], AfterValidator(_check_interval)]

M = TypeVar("M", bound=BaseModel)


class RandgraspError(Exception):
    """Base class of every error raised by the engine."""


class InvalidConfigurationError(RandgraspError):
    """Invalid configuration."""

    pass


@unique
class StageId(IntEnum):
    """The five scripted stages of an episode, in execution order."""

    REACH_ABOVE_CUBE = 0
    CLOSE_GRIPPER = 1
    LIFT = 2
    TRANSPORT_TO_BASKET = 3
    RELEASE = 4


@unique
class GripperAction(IntEnum):
    """Gripper action classes; values are the on-disk codes."""

    OPEN = 0
    CLOSE = 1
    NO_OP = 2


# TODO: inherit enum.StrEnum once python 3.10 is the floor.
@unique
class BasketSide(str, Enum):
    """Side of the arm the basket is placed on."""

    left = "left"
    right = "right"


@unique
class DistractorShape(str, Enum):
    """Primitive shapes used as distractors."""

    box = "box"
    sphere = "sphere"
    cylinder = "cylinder"


@unique
class CompositionFunction(str, Enum):
    """Functions composed with gradient noise when synthesizing textures."""

    identity = "identity"
    sine = "sine"
    absolute = "absolute"
    ridge = "ridge"


@unique
class VelocityProfile(str, Enum):
    """Arc-length profiles along a linear Cartesian path."""

    constant = "constant"
    trapezoidal = "trapezoidal"


@unique
class TestCondition(str, Enum):
    """Simulated analogues of the real-world stress tests."""

    __test__ = False  # not a pytest class

    standard = "standard"
    distractors = "distractors"
    moving_camera = "moving_camera"
    small_cube = "small_cube"


class ColorDistribution(BaseModel):
    """Per-channel normal distribution of an object colour."""

    mean: RGB
    stddev: RGB = (0.05, 0.05, 0.05)

    @field_validator("stddev")
    @classmethod
    def check_stddev(cls, value: RGB) -> RGB:
        if any(s < 0 for s in value):
            raise ValueError("colour stddev must be non-negative")
        return value


class ColorRange(BaseModel):
    """Per-channel uniform colour range, used for plain (untextured) surfaces."""

    center: RGB
    half_width: float = Field(default=0.5, ge=0)


class Region(BaseModel):
    """Axis-aligned rectangle on the table plane."""

    x: Interval
    y: Interval

    @property
    def center(self) -> Tuple[float, float]:
        """Rectangle center."""
        return (0.5 * (self.x[0] + self.x[1]), 0.5 * (self.y[0] + self.y[1]))


class TextureParams(BaseModel):
    """Procedural texture synthesis parameters."""

    octaves: int = Field(default=4, ge=1)
    base_freq: float = Field(default=4.0, gt=0)
    resolution: int = Field(default=64, ge=16)
    compositions: Tuple[CompositionFunction, ...] = tuple(CompositionFunction)
    sine_gain_range: Interval = (2.0, 8.0)
    palette: Optional[Tuple[RGB, RGB]] = None
    """Pinned palette endpoints; sampled from the seed when unset."""

    @field_validator("compositions")
    @classmethod
    def check_compositions(cls, value):
        if not value:
            raise ValueError("at least one composition function is required")
        return value


class AblationSwitches(BaseModel):
    """Independent randomisation switches."""

    distractors: bool = True
    textures: bool = True
    camera_jitter: bool = True
    shadows: bool = True


def _default_basket_regions() -> Dict[BasketSide, Region]:
    return {
        BasketSide.left: Region(x=(-0.05, 0.25), y=(0.30, 0.60)),
        BasketSide.right: Region(x=(-0.05, 0.25), y=(-0.60, -0.30)),
    }


class RandomisationConfig(BaseModel):
    """Every distribution sampled when building a scene."""

    model_config = ConfigDict(use_enum_values=False)

    cube_color: ColorDistribution = ColorDistribution(mean=REAL_WORLD_CUBE)
    basket_color: ColorDistribution = ColorDistribution(mean=REAL_WORLD_BASKET)
    arm_color: ColorDistribution = ColorDistribution(mean=REAL_WORLD_ARM)
    table_color: ColorRange = ColorRange(center=(0.5, 0.5, 0.5))
    background_color: ColorRange = ColorRange(center=(0.5, 0.5, 0.5))

    cube_edge: float = Field(default=0.06, gt=0)
    cube_region: Region = Region(x=(0.20, 0.60), y=(-0.20, 0.20))
    basket_regions: Dict[BasketSide, Region] = Field(default_factory=_default_basket_regions)
    basket_sides: Tuple[BasketSide, ...] = (BasketSide.left, BasketSide.right)
    basket_half_extents: Tuple[float, float] = (0.07, 0.07)
    basket_depth: float = Field(default=0.10, gt=0)

    camera_eye: Vec3 = (1.20, 0.0, 0.90)
    camera_target: Vec3 = (0.25, 0.0, 0.0)
    camera_position_box: Vec3 = (0.20, 0.20, 0.20)
    """Full edge lengths of the uniform box the camera position is drawn from."""
    camera_fov_y: float = Field(default=math.radians(60.0), gt=0, lt=math.pi)
    image_resolution: int = Field(default=64, ge=1)

    light_direction: Vec3 = (-0.3, 0.2, -1.0)
    """Direction the light travels, pointing down onto the table."""
    light_direction_cone: float = Field(default=math.radians(30.0), ge=0, lt=math.pi / 2)
    light_intensity_range: Interval = (0.7, 1.3)

    base_height_range: Interval = (0.03, 0.07)
    start_joint_stddev: float = Field(default=0.03, ge=0)

    distractor_count_range: Tuple[int, int] = (0, 4)
    distractor_size_range: Interval = (0.03, 0.08)
    distractor_region: Region = Region(x=(-0.30, 0.90), y=(-0.70, 0.70))

    table_texture: TextureParams = TextureParams()
    background_texture: TextureParams = TextureParams(base_freq=3.0)
    switches: AblationSwitches = AblationSwitches()

    @field_validator("distractor_count_range")
    @classmethod
    def check_count_range(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        lo, hi = value
        if lo < 0 or lo > hi:
            raise ValueError(f"invalid distractor count range {value}")
        return value

    @field_validator("camera_position_box")
    @classmethod
    def check_box(cls, value: Vec3) -> Vec3:
        if any(v < 0 for v in value):
            raise ValueError("camera position box extents must be non-negative")
        return value

    @model_validator(mode="after")
    def check_basket_regions(self) -> "RandomisationConfig":
        if not self.basket_sides:
            raise ValueError("at least one basket side is required")
        for side in self.basket_sides:
            if side not in self.basket_regions:
                raise ValueError(f"no basket region configured for side {side.value}")
        if self.light_direction[2] >= 0:
            raise ValueError("light must point down onto the table")
        return self


# network heads are fixed by the task: 6 velocities, 3 gripper classes, 2 auxiliary 3D points.
HEAD_SIZES = {"velocity": JOINT_COUNT, "gripper": 3, "cube": 3, "gripper_position": 3}


class NetConfig(BaseModel):
    """Controller architecture."""

    input_resolution: int = 64
    conv_channels: Tuple[int, ...] = (16, 16, 32, 32, 64, 64)
    conv_kernels: Tuple[int, ...] = (3, 3, 3, 3, 3, 2)
    conv_strides: Tuple[int, ...] = (2, 2, 2, 2, 2, 2)
    lstm_hidden: int = Field(default=128, ge=1)
    fc_hidden: int = Field(default=128, ge=1)
    window: int = Field(default=4, ge=1)
    use_lstm: bool = True
    use_auxiliary: bool = True
    use_joint_angles: bool = True

    @model_validator(mode="after")
    def check_layers(self) -> "NetConfig":
        if not (len(self.conv_channels) == len(self.conv_kernels) == len(self.conv_strides)):
            raise ValueError("conv channels, kernels and strides must have the same length")
        if not self.conv_channels:
            raise ValueError("at least one convolutional layer is required")
        if self.spatial_sizes[-1] < 1:
            raise ValueError(
                f"input resolution {self.input_resolution} is too small for "
                f"{len(self.conv_channels)} stride-{self.conv_strides[0]} layers"
            )
        return self

    @staticmethod
    def padding_for(kernel: int) -> int:
        """Padding used with a kernel: 'same'-style for odd kernels, none for even ones."""
        return (kernel - 1) // 2

    @property
    def spatial_sizes(self) -> Tuple[int, ...]:
        """Feature map edge length after each convolution."""
        sizes = []
        size = self.input_resolution
        for kernel, stride in zip(self.conv_kernels, self.conv_strides):
            size = (size + 2 * self.padding_for(kernel) - kernel) // stride + 1
            sizes.append(size)
        return tuple(sizes)

    @property
    def feature_size(self) -> int:
        """Flattened convolutional feature length per frame."""
        return self.spatial_sizes[-1] ** 2 * self.conv_channels[-1]

    @classmethod
    def for_profile(cls, profile: str, **overrides: Any) -> "NetConfig":
        """Return the preset for a named profile."""
        try:
            preset = NET_PROFILES[profile]
        except KeyError:
            raise InvalidConfigurationError(f"unknown profile {profile!r}") from None
        return cls(**{**preset, **overrides})


NET_PROFILES: Dict[str, Dict[str, Any]] = {
    "paper": {
        "input_resolution": 256,
        "conv_channels": (32, 32, 64, 64, 128, 128, 256, 256),
        "conv_kernels": (3, 3, 3, 3, 3, 3, 3, 2),
        "conv_strides": (2,) * 8,
    },
    "desk": {
        "input_resolution": 64,
        "conv_channels": (16, 16, 32, 32, 64, 64),
        "conv_kernels": (3, 3, 3, 3, 3, 2),
        "conv_strides": (2,) * 6,
    },
    # gradient-checking size
    "tiny": {
        "input_resolution": 8,
        "conv_channels": (2, 3),
        "conv_kernels": (3, 2),
        "conv_strides": (2, 2),
        "lstm_hidden": 4,
        "fc_hidden": 5,
    },
}


class TrainConfig(BaseModel):
    """Optimizer and sampling settings."""

    learning_rate: float = Field(default=1e-4, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=16, ge=1)
    sequence_length: int = Field(default=4, ge=1)
    epochs: int = Field(default=1, ge=1)
    steps: Optional[int] = Field(default=None, ge=1)
    """Explicit optimizer step count; overrides ``epochs`` when set."""
    seed: int = Field(default=0, ge=0)
    class_weights: Optional[Tuple[float, float, float]] = None
    """Gripper class weights (open, close, no-op); inverse frequency when unset."""
    prefetch: bool = False
    log_every: int = Field(default=50, ge=1)


class BudgetConfig(BaseModel):
    """Per-row data and compute budget of an ablation run."""

    profile: str = "desk"
    episodes: int = Field(ge=1)
    train_steps: int = Field(ge=1)
    batch_size: int = Field(default=16, ge=1)
    max_steps: int = Field(default=600, ge=1)
    sweep_frames: Tuple[int, ...] = ()
    workers: int = Field(default=1, ge=1)


BUDGETS: Dict[str, BudgetConfig] = {
    "tiny": BudgetConfig(
        profile="desk",
        episodes=2,
        train_steps=5,
        batch_size=2,
        max_steps=40,
        sweep_frames=(250, 500),
    ),
    "desk": BudgetConfig(
        profile="desk",
        episodes=100,
        train_steps=4000,
        batch_size=16,
        sweep_frames=(5000, 20000, 50000),
        workers=4,
    ),
    "paper": BudgetConfig(
        profile="paper",
        episodes=4000,
        train_steps=200000,
        batch_size=32,
        sweep_frames=(100000, 200000, 400000, 1000000),
        workers=16,
    ),
}


def budget_for(name: str) -> BudgetConfig:
    """Return a named budget preset."""
    try:
        return BUDGETS[name]
    except KeyError:
        raise InvalidConfigurationError(
            f"unknown budget {name!r}; expected one of {sorted(BUDGETS)}"
        ) from None


def dump_document(model: BaseModel, header: str = CONFIG_HEADER) -> str:
    """Serialize a model as a headed YAML document."""
    body = yaml.safe_dump(model.model_dump(mode="json"), sort_keys=True)
    return f"{header}\n{body}"


def load_document(text: str, model_cls: Type[M], header: str = CONFIG_HEADER) -> M:
    """Parse and validate a headed YAML document."""
    first, _, body = text.partition("\n")
    if first.strip() != header:
        raise InvalidConfigurationError(f"expected header {header!r}, found {first.strip()!r}")
    try:
        raw = yaml.safe_load(body) or {}
        return model_cls.model_validate(raw)
    except (yaml.YAMLError, pydantic.ValidationError) as e:
        raise InvalidConfigurationError(f"invalid {model_cls.__name__} document: {e}") from e


def config_digest(model: BaseModel) -> bytes:
    """SHA-256 of a model's canonical JSON form."""
    return hashlib.sha256(model.model_dump_json().encode("utf-8")).digest()
