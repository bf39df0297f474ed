# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Visuomotor controller: convolutional encoder, recurrent core, task and auxiliary heads.

The network maps a window of camera frames and joint angles to joint velocities, gripper
action logits and two auxiliary position estimates. Everything (forward pass, analytic
gradients, Adam, training loop, checkpoint format) is plain numpy.
"""

import hashlib
import logging
import math
import os
import struct
import tempfile
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Deque, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pydantic
from pydantic import BaseModel

from dataset import DatasetReader, DatasetStats, stats_from_reader
from layers import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    log_softmax,
    lstm_backward,
    lstm_forward,
)
from mathkin import ArmModel, reference_arm
from randgrasp_config import (
    ENGINE_VERSION,
    HEAD_SIZES,
    JOINT_COUNT,
    GripperAction,
    NetConfig,
    RandgraspError,
    TrainConfig,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RGCK1\x00\x00\x00"
CHECKPOINT_VERSION = 1
CHECKPOINT_PREFIX = struct.Struct("<8sII")
STEP_COUNTER = struct.Struct("<Q")
CHECKSUM_SIZE = 32
STD_FLOOR = 1e-6
FORGET_BIAS = 1.0
LOSS_SMOOTHING = 0.9


class ShapeMismatch(RandgraspError):
    """Raised when tensors do not have the shapes the network configuration implies."""


class CorruptCheckpoint(RandgraspError):
    """Raised when a checkpoint file fails validation."""


class ParameterLayout:
    """Named views into one flat parameter vector, derived from a ``NetConfig``."""

    def __init__(self, config: NetConfig):
        self.config = config
        self.shapes: Dict[str, Tuple[int, ...]] = {}
        cin = 3
        for i, (channels, kernel) in enumerate(zip(config.conv_channels, config.conv_kernels)):
            self.shapes[f"conv{i}.w"] = (kernel, kernel, cin, channels)
            self.shapes[f"conv{i}.b"] = (channels,)
            cin = channels
        hidden = config.lstm_hidden
        if config.use_lstm:
            self.shapes["lstm.w"] = (self.frame_input_size + hidden, 4 * hidden)
            self.shapes["lstm.b"] = (4 * hidden,)
        else:
            self.shapes["window.w"] = (config.window * self.frame_input_size, hidden)
            self.shapes["window.b"] = (hidden,)
        self.shapes["fc.w"] = (hidden, config.fc_hidden)
        self.shapes["fc.b"] = (config.fc_hidden,)
        for head, size in HEAD_SIZES.items():
            self.shapes[f"head.{head}.w"] = (config.fc_hidden, size)
            self.shapes[f"head.{head}.b"] = (size,)

        self.slices: Dict[str, slice] = {}
        offset = 0
        for name, shape in self.shapes.items():
            count = math.prod(shape)
            self.slices[name] = slice(offset, offset + count)
            offset += count
        self.size = offset

    @property
    def frame_input_size(self) -> int:
        """Per-frame input width of the recurrent core."""
        return self.config.feature_size + (JOINT_COUNT if self.config.use_joint_angles else 0)

    def views(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        if flat.shape != (self.size,):
            raise ShapeMismatch(f"expected {self.size} parameters, got shape {flat.shape}")
        return {
            name: flat[self.slices[name]].reshape(shape) for name, shape in self.shapes.items()
        }


@dataclass
class NetOutput:
    """Head outputs, batched along the first axis. Also used for their gradients."""

    velocity: np.ndarray
    gripper_logits: np.ndarray
    cube_position: np.ndarray
    gripper_position: np.ndarray

    def __getitem__(self, index) -> "NetOutput":
        return NetOutput(*(getattr(self, f.name)[index] for f in fields(self)))

    @property
    def action(self) -> GripperAction:
        """Most likely gripper action of an unbatched output."""
        return GripperAction(int(np.argmax(self.gripper_logits)))


# head parameter name -> NetOutput attribute
HEAD_OUTPUTS = {
    "velocity": "velocity",
    "gripper": "gripper_logits",
    "cube": "cube_position",
    "gripper_position": "gripper_position",
}


class LstmState(NamedTuple):
    hidden: np.ndarray
    cell: np.ndarray


@dataclass
class _ForwardCache:
    images_shape: Tuple[int, ...]
    conv_caches: list
    conv_masks: List[np.ndarray]
    features: np.ndarray
    recurrent_cache: object
    recurrent_mask: Optional[np.ndarray]
    core: np.ndarray
    fc_mask: np.ndarray
    fc: np.ndarray
    next_state: Optional[LstmState]


class ControllerNet:
    """Controller network over a flat parameter vector.

    One instance owns one recurrent state; share parameters, not instances, between
    concurrently deployed controllers.
    """

    def __init__(self, config: NetConfig, parameters: Optional[np.ndarray] = None):
        self.config = config
        self.layout = ParameterLayout(config)
        if parameters is None:
            parameters = np.zeros(self.layout.size)
        self.parameters = np.asarray(parameters, dtype=np.float64)
        self.layout.views(self.parameters)
        self._cache: Optional[_ForwardCache] = None
        self._window: Deque[Tuple[np.ndarray, np.ndarray]] = deque(maxlen=config.window)
        self.state: Optional[LstmState] = None

    @property
    def parameter_count(self) -> int:
        return self.layout.size

    @property
    def views(self) -> Dict[str, np.ndarray]:
        return self.layout.views(self.parameters)

    def initialize(self, seed: int) -> "ControllerNet":
        """He-normal weights, zero biases, unit LSTM forget-gate bias."""
        rng = np.random.default_rng(seed)
        views = self.views
        for name, shape in self.layout.shapes.items():
            if name.endswith(".b"):
                continue
            fan_in = math.prod(shape[:-1])
            if name.startswith("head."):
                scale = math.sqrt(1.0 / fan_in)
            elif name == "lstm.w":
                scale = 1.0 / math.sqrt(fan_in)
            else:
                scale = math.sqrt(2.0 / fan_in)
            views[name][...] = rng.normal(0.0, scale, size=shape)
        if self.config.use_lstm:
            hidden = self.config.lstm_hidden
            views["lstm.b"][hidden : 2 * hidden] = FORGET_BIAS
        return self

    def _check_inputs(self, images: np.ndarray, joints: np.ndarray) -> None:
        size = self.config.input_resolution
        if images.ndim != 5 or images.shape[2:] != (size, size, 3):
            raise ShapeMismatch(
                f"images must be (batch, time, {size}, {size}, 3), got {images.shape}"
            )
        if joints.shape != images.shape[:2] + (JOINT_COUNT,):
            raise ShapeMismatch(
                f"joints must be {images.shape[:2] + (JOINT_COUNT,)}, got {joints.shape}"
            )
        if not self.config.use_lstm and images.shape[1] != self.config.window:
            raise ShapeMismatch(
                f"feedforward core expects windows of {self.config.window}, got {images.shape[1]}"
            )

    def forward(
        self, images: np.ndarray, joints: np.ndarray, state: Optional[LstmState] = None
    ) -> NetOutput:
        """Run the network on (batch, time, H, W, 3) images and (batch, time, 6) joints.

        Outputs are predicted for the last frame of each window. The recurrent core starts
        from ``state`` (zeros when omitted).
        """
        images = np.asarray(images, dtype=np.float64)
        joints = np.asarray(joints, dtype=np.float64)
        self._check_inputs(images, joints)
        cfg = self.config
        views = self.views
        batch, steps = images.shape[:2]

        x = images.reshape((batch * steps,) + images.shape[2:])
        conv_caches, conv_masks = [], []
        for i, (kernel, stride) in enumerate(zip(cfg.conv_kernels, cfg.conv_strides)):
            z, cache = conv2d_forward(
                x, views[f"conv{i}.w"], views[f"conv{i}.b"], stride, cfg.padding_for(kernel)
            )
            mask = z > 0
            x = z * mask
            conv_caches.append(cache)
            conv_masks.append(mask)
        features = x.reshape(batch, steps, -1)
        if cfg.use_joint_angles:
            features = np.concatenate([features, joints], axis=2)

        next_state = None
        recurrent_mask = None
        if cfg.use_lstm:
            hidden = cfg.lstm_hidden
            if state is None:
                state = LstmState(np.zeros((batch, hidden)), np.zeros((batch, hidden)))
            hs, cells, recurrent_cache = lstm_forward(
                features.transpose(1, 0, 2), views["lstm.w"], views["lstm.b"], *state
            )
            core = hs[-1]
            next_state = LstmState(hs[0].copy(), cells[0].copy())
        else:
            flat = features.reshape(batch, -1)
            z = dense_forward(flat, views["window.w"], views["window.b"])
            recurrent_mask = z > 0
            core = z * recurrent_mask
            recurrent_cache = flat

        z = dense_forward(core, views["fc.w"], views["fc.b"])
        fc_mask = z > 0
        fc = z * fc_mask
        out = NetOutput(
            **{
                attr: dense_forward(fc, views[f"head.{head}.w"], views[f"head.{head}.b"])
                for head, attr in HEAD_OUTPUTS.items()
            }
        )
        self._cache = _ForwardCache(
            images.shape,
            conv_caches,
            conv_masks,
            features,
            recurrent_cache,
            recurrent_mask,
            core,
            fc_mask,
            fc,
            next_state,
        )
        return out

    def backward(self, grad_output: NetOutput) -> np.ndarray:
        """Gradient of the loss with respect to every parameter, given head gradients."""
        cache = self._cache
        if cache is None:
            raise RandgraspError("backward called before forward")
        cfg = self.config
        views = self.views
        grad = np.zeros_like(self.parameters)
        grads = self.layout.views(grad)

        dfc = np.zeros_like(cache.fc)
        for head, attr in HEAD_OUTPUTS.items():
            dhead = getattr(grad_output, attr)
            dx, dw, db = dense_backward(dhead, cache.fc, views[f"head.{head}.w"])
            grads[f"head.{head}.w"][...] = dw
            grads[f"head.{head}.b"][...] = db
            dfc += dx
        dz = dfc * cache.fc_mask
        dcore, grads["fc.w"][...], grads["fc.b"][...] = dense_backward(
            dz, cache.core, views["fc.w"]
        )

        batch, steps = cache.images_shape[:2]
        if cfg.use_lstm:
            dhs = np.zeros((steps, batch, cfg.lstm_hidden))
            dhs[-1] = dcore
            dxs, grads["lstm.w"][...], grads["lstm.b"][...], _, _ = lstm_backward(
                dhs, cache.recurrent_cache
            )
            dfeatures = dxs.transpose(1, 0, 2)
        else:
            dz = dcore * cache.recurrent_mask
            dflat, grads["window.w"][...], grads["window.b"][...] = dense_backward(
                dz, cache.recurrent_cache, views["window.w"]
            )
            dfeatures = dflat.reshape(batch, steps, -1)

        last = len(cfg.conv_channels) - 1
        dx = dfeatures[:, :, : cfg.feature_size].reshape(cache.conv_masks[last].shape)
        for i in range(last, -1, -1):
            dz = dx * cache.conv_masks[i]
            dx, grads[f"conv{i}.w"][...], grads[f"conv{i}.b"][...] = conv2d_backward(
                dz, cache.conv_caches[i], need_input_grad=i > 0
            )
        return grad

    def activation_signature(self, images: np.ndarray, joints: np.ndarray) -> bytes:
        """Packed ReLU activation pattern for these inputs."""
        self.forward(images, joints)
        masks = list(self._cache.conv_masks) + [self._cache.fc_mask]
        if self._cache.recurrent_mask is not None:
            masks.append(self._cache.recurrent_mask)
        return np.packbits(np.concatenate([m.ravel() for m in masks])).tobytes()

    def reset_state(self) -> None:
        """Forget the frame window and zero the recurrent state (episode start)."""
        self._window.clear()
        self.state = None

    def step(self, image: np.ndarray, joints: np.ndarray) -> NetOutput:
        """Deployment step on one normalized frame; returns an unbatched output."""
        image = np.asarray(image, dtype=np.float64)
        joints = np.asarray(joints, dtype=np.float64)
        if not self._window:
            for _ in range(self.config.window):
                self._window.append((image, joints))
        else:
            self._window.append((image, joints))
        images = np.stack([frame for frame, _ in self._window])[None]
        window_joints = np.stack([q for _, q in self._window])[None]
        out = self.forward(images, window_joints, self.state)
        if self.config.use_lstm:
            self.state = self._cache.next_state
        return out[0]


@dataclass
class Targets:
    velocity: np.ndarray
    action: np.ndarray
    cube_position: np.ndarray
    gripper_position: np.ndarray


@dataclass
class Batch:
    images: np.ndarray
    joints: np.ndarray
    targets: Targets


@dataclass(frozen=True)
class LossBreakdown:
    l_v: float
    l_g: float
    l_gp: float
    l_cp: float

    @property
    def total(self) -> float:
        return self.l_v + self.l_g + self.l_gp + self.l_cp


def _check_targets(pred: NetOutput, target: Targets) -> None:
    batch = pred.velocity.shape[0]
    expected = {
        "velocity": (pred.velocity.shape, np.shape(target.velocity)),
        "cube_position": (pred.cube_position.shape, np.shape(target.cube_position)),
        "gripper_position": (pred.gripper_position.shape, np.shape(target.gripper_position)),
        "action": ((batch,), np.shape(target.action)),
    }
    for name, (want, got) in expected.items():
        if want != got:
            raise ShapeMismatch(f"{name} target shape {got} does not match prediction {want}")


def _class_weights(class_weights: Optional[np.ndarray]) -> np.ndarray:
    if class_weights is None:
        return np.ones(len(GripperAction))
    return np.asarray(class_weights, dtype=np.float64)


def loss(
    pred: NetOutput,
    target: Targets,
    class_weights: Optional[np.ndarray] = None,
    use_auxiliary: bool = True,
) -> LossBreakdown:
    """Velocity MSE, weighted gripper cross-entropy and the two auxiliary position MSEs."""
    _check_targets(pred, target)
    weights = _class_weights(class_weights)
    action = np.asarray(target.action, dtype=np.int64)
    l_v = float(np.mean((pred.velocity - target.velocity) ** 2))
    logp = log_softmax(pred.gripper_logits)
    picked = logp[np.arange(len(action)), action]
    l_g = float(np.mean(-weights[action] * picked))
    l_gp = l_cp = 0.0
    if use_auxiliary:
        l_gp = float(np.mean((pred.gripper_position - target.gripper_position) ** 2))
        l_cp = float(np.mean((pred.cube_position - target.cube_position) ** 2))
    return LossBreakdown(l_v, l_g, l_gp, l_cp)


def loss_gradient(
    pred: NetOutput,
    target: Targets,
    class_weights: Optional[np.ndarray] = None,
    use_auxiliary: bool = True,
) -> NetOutput:
    """Gradient of ``loss(...).total`` with respect to each head output."""
    _check_targets(pred, target)
    weights = _class_weights(class_weights)
    action = np.asarray(target.action, dtype=np.int64)
    batch = len(action)
    probs = np.exp(log_softmax(pred.gripper_logits))
    probs[np.arange(batch), action] -= 1.0
    dlogits = probs * (weights[action] / batch)[:, None]

    def mse(p, t):
        return 2.0 * (p - t) / p.size

    if use_auxiliary:
        dgp = mse(pred.gripper_position, target.gripper_position)
        dcp = mse(pred.cube_position, target.cube_position)
    else:
        dgp = np.zeros_like(pred.gripper_position)
        dcp = np.zeros_like(pred.cube_position)
    return NetOutput(mse(pred.velocity, target.velocity), dlogits, dcp, dgp)


def backward(
    net: ControllerNet, batch: Batch, class_weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """Parameter gradient for ``batch`` using the network's cached forward pass."""
    if net._cache is None or net._cache.images_shape != np.shape(batch.images):
        raise RandgraspError("no cached forward pass for this batch")
    pred = _cached_prediction(net)
    return net.backward(
        loss_gradient(pred, batch.targets, class_weights, net.config.use_auxiliary)
    )


def _cached_prediction(net: ControllerNet) -> NetOutput:
    cache = net._cache
    views = net.views
    return NetOutput(
        **{
            attr: dense_forward(cache.fc, views[f"head.{head}.w"], views[f"head.{head}.b"])
            for head, attr in HEAD_OUTPUTS.items()
        }
    )


def loss_and_gradient(
    net: ControllerNet, batch: Batch, class_weights: Optional[np.ndarray] = None
) -> Tuple[LossBreakdown, np.ndarray]:
    pred = net.forward(batch.images, batch.joints)
    use_aux = net.config.use_auxiliary
    breakdown = loss(pred, batch.targets, class_weights, use_aux)
    grad = net.backward(loss_gradient(pred, batch.targets, class_weights, use_aux))
    return breakdown, grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState, cfg: TrainConfig
) -> np.ndarray:
    """One bias-corrected Adam update; advances ``state`` in place and returns new params."""
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ShapeMismatch(
            f"params {params.shape}, grads {grads.shape} and optimizer state "
            f"{state.m.shape} disagree"
        )
    state.t += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = state.m / (1.0 - cfg.beta1**state.t)
    v_hat = state.v / (1.0 - cfg.beta2**state.t)
    return params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


class Normalizer(BaseModel):
    """Input and target scaling fitted on a dataset; stored in checkpoints."""

    joint_low: List[float]
    joint_high: List[float]
    velocity_mean: List[float]
    velocity_std: List[float]
    cube_mean: List[float]
    cube_std: List[float]
    gripper_mean: List[float]
    gripper_std: List[float]

    @classmethod
    def from_stats(cls, stats: DatasetStats, model: ArmModel) -> "Normalizer":
        def floor(std):
            return np.maximum(np.asarray(std), STD_FLOOR).tolist()

        limits = model.joint_limits
        return cls(
            joint_low=limits[:, 0].tolist(),
            joint_high=limits[:, 1].tolist(),
            velocity_mean=stats.velocity_mean,
            velocity_std=floor(stats.velocity_std),
            cube_mean=stats.cube_position_mean,
            cube_std=floor(stats.cube_position_std),
            gripper_mean=stats.gripper_position_mean,
            gripper_std=floor(stats.gripper_position_std),
        )

    def joints(self, q: np.ndarray) -> np.ndarray:
        """Map joint angles to [-1, 1] by joint limits."""
        low, high = np.asarray(self.joint_low), np.asarray(self.joint_high)
        return 2.0 * (np.asarray(q) - low) / (high - low) - 1.0

    @staticmethod
    def image(pixels: np.ndarray) -> np.ndarray:
        return np.asarray(pixels, dtype=np.float64) / 255.0

    def velocity(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v) - self.velocity_mean) / np.asarray(self.velocity_std)

    def velocity_inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.velocity_std + np.asarray(self.velocity_mean)

    def cube(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p) - self.cube_mean) / np.asarray(self.cube_std)

    def cube_inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.cube_std + np.asarray(self.cube_mean)

    def gripper(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p) - self.gripper_mean) / np.asarray(self.gripper_std)

    def gripper_inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.gripper_std + np.asarray(self.gripper_mean)


def inverse_frequency_weights(counts: Dict[str, int]) -> np.ndarray:
    """Per-class weights ``N / (3 * count)``; classes never seen get weight 1."""
    ordered = np.array([counts.get(a.name.lower(), 0) for a in GripperAction], dtype=np.float64)
    total = ordered.sum()
    weights = np.ones(len(GripperAction))
    seen = ordered > 0
    weights[seen] = total / (len(GripperAction) * ordered[seen])
    return weights


class CheckpointHeader(BaseModel):
    engine_version: str = ENGINE_VERSION
    net_config: NetConfig
    train_config: TrainConfig
    normalizer: Normalizer
    class_weights: List[float]
    parameter_count: int
    manifest: str = ""


@dataclass
class Checkpoint:
    net_config: NetConfig
    train_config: TrainConfig
    normalizer: Normalizer
    class_weights: np.ndarray
    parameters: np.ndarray
    adam: AdamState
    manifest: str = ""

    def controller(self) -> ControllerNet:
        return ControllerNet(self.net_config, self.parameters.copy())


def checkpoint_bytes(checkpoint: Checkpoint) -> bytes:
    header = CheckpointHeader(
        net_config=checkpoint.net_config,
        train_config=checkpoint.train_config,
        normalizer=checkpoint.normalizer,
        class_weights=np.asarray(checkpoint.class_weights, dtype=float).tolist(),
        parameter_count=len(checkpoint.parameters),
        manifest=checkpoint.manifest,
    ).model_dump_json()
    encoded = header.encode("utf-8")
    body = b"".join(
        [
            CHECKPOINT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(encoded)),
            encoded,
            np.ascontiguousarray(checkpoint.parameters, dtype="<f8").tobytes(),
            np.ascontiguousarray(checkpoint.adam.m, dtype="<f8").tobytes(),
            np.ascontiguousarray(checkpoint.adam.v, dtype="<f8").tobytes(),
            STEP_COUNTER.pack(checkpoint.adam.t),
        ]
    )
    return body + hashlib.sha256(body).digest()


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> None:
    """Atomically write a checkpoint file."""
    path = Path(path)
    data = checkpoint_bytes(checkpoint)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    logger.info("wrote checkpoint %s (%d parameters)", path, len(checkpoint.parameters))


def parse_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < CHECKPOINT_PREFIX.size + STEP_COUNTER.size + CHECKSUM_SIZE:
        raise CorruptCheckpoint(f"{source}: file too short")
    body, digest = data[:-CHECKSUM_SIZE], data[-CHECKSUM_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{source}: checksum mismatch")
    magic, version, header_len = CHECKPOINT_PREFIX.unpack_from(body)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"{source}: not an RGCK1 checkpoint")
    offset = CHECKPOINT_PREFIX.size
    try:
        header = CheckpointHeader.model_validate_json(body[offset : offset + header_len])
    except pydantic.ValidationError as e:
        raise CorruptCheckpoint(f"{source}: invalid checkpoint header: {e}") from e
    offset += header_len
    count = header.parameter_count
    if count != ParameterLayout(header.net_config).size:
        raise CorruptCheckpoint(f"{source}: parameter count does not match the architecture")
    if len(body) != offset + 3 * 8 * count + STEP_COUNTER.size:
        raise CorruptCheckpoint(f"{source}: payload size does not match header")
    arrays = np.frombuffer(body, dtype="<f8", count=3 * count, offset=offset).reshape(3, count)
    (t,) = STEP_COUNTER.unpack_from(body, offset + 3 * 8 * count)
    return Checkpoint(
        net_config=header.net_config,
        train_config=header.train_config,
        normalizer=header.normalizer,
        class_weights=np.asarray(header.class_weights),
        parameters=arrays[0].astype(np.float64),
        adam=AdamState(arrays[1].astype(np.float64), arrays[2].astype(np.float64), t),
        manifest=header.manifest,
    )


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CorruptCheckpoint(f"could not read checkpoint {path}: {e}") from e
    return parse_checkpoint(data, str(path))


def sample_windows(
    reader: DatasetReader, rng: np.random.Generator, batch_size: int, length: int
) -> np.ndarray:
    """Global step indices of ``batch_size`` windows ending at uniformly drawn steps.

    Frames before the episode start repeat the episode's first frame.
    """
    ends = rng.integers(0, reader.step_count, size=batch_size)
    starts = reader.episode_starts[reader.episode_of_step(ends)]
    indices = ends[:, None] + np.arange(1 - length, 1)[None, :]
    return np.maximum(indices, starts[:, None])


def make_batch(reader: DatasetReader, indices: np.ndarray, normalizer: Normalizer) -> Batch:
    batch, length = indices.shape
    rows = np.asarray(reader.steps[indices.ravel()]).reshape(batch, length)
    last = rows[:, -1]
    return Batch(
        images=Normalizer.image(rows["image"]),
        joints=normalizer.joints(rows["joint_angles"]),
        targets=Targets(
            velocity=normalizer.velocity(last["motor_velocities"]),
            action=last["gripper_action"].astype(np.int64),
            cube_position=normalizer.cube(last["cube_position"]),
            gripper_position=normalizer.gripper(last["gripper_position"]),
        ),
    )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_curve: List[float] = field(default_factory=list)
    final_loss: Optional[LossBreakdown] = None


def train(
    dataset_path: Union[str, Path],
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    *,
    model: Optional[ArmModel] = None,
    resume: Optional[Checkpoint] = None,
    manifest: str = "",
) -> TrainResult:
    """Fit a controller on a dataset by behaviour cloning.

    Deterministic given the dataset, both configs and the seed; the prefetch thread only
    gathers batches whose indices were already drawn in order.
    """
    model = model or reference_arm()
    length = train_cfg.sequence_length
    if not net_cfg.use_lstm and length != net_cfg.window:
        raise ShapeMismatch(
            f"feedforward core needs sequence_length == window ({net_cfg.window}), got {length}"
        )
    with DatasetReader(dataset_path) as reader:
        if (reader.width, reader.height) != (net_cfg.input_resolution,) * 2:
            raise ShapeMismatch(
                f"dataset images are {reader.width}x{reader.height}, network expects "
                f"{net_cfg.input_resolution}x{net_cfg.input_resolution}"
            )
        if reader.step_count == 0:
            raise ShapeMismatch(f"dataset {dataset_path} has no steps")
        stats = stats_from_reader(reader)
        if resume is not None:
            normalizer = resume.normalizer
            class_weights = np.asarray(resume.class_weights)
            net = resume.controller()
            adam = AdamState(resume.adam.m.copy(), resume.adam.v.copy(), resume.adam.t)
        else:
            normalizer = Normalizer.from_stats(stats, model)
            class_weights = (
                np.asarray(train_cfg.class_weights)
                if train_cfg.class_weights is not None
                else inverse_frequency_weights(stats.action_counts)
            )
            net = ControllerNet(net_cfg).initialize(train_cfg.seed)
            adam = AdamState.zeros(net.parameter_count)

        total_steps = train_cfg.steps or train_cfg.epochs * math.ceil(
            reader.step_count / train_cfg.batch_size
        )
        rng = np.random.default_rng([train_cfg.seed, adam.t])
        plan = (
            sample_windows(reader, rng, train_cfg.batch_size, length) for _ in range(total_steps)
        )
        logger.info(
            "training %d parameters for %d steps on %d episodes (%d steps)",
            net.parameter_count,
            total_steps,
            reader.episode_count,
            reader.step_count,
        )

        curve: List[float] = []
        smoothed = None
        breakdown = None
        for step, batch in enumerate(_batches(reader, plan, normalizer, train_cfg.prefetch), 1):
            breakdown, grad = loss_and_gradient(net, batch, class_weights)
            net.parameters = adam_step(net.parameters, grad, adam, train_cfg)
            curve.append(breakdown.total)
            smoothed = (
                breakdown.total
                if smoothed is None
                else LOSS_SMOOTHING * smoothed + (1 - LOSS_SMOOTHING) * breakdown.total
            )
            if step % train_cfg.log_every == 0 or step == total_steps:
                logger.info(
                    "step %d/%d loss %.5f (v %.5f g %.5f gp %.5f cp %.5f)",
                    step,
                    total_steps,
                    smoothed,
                    breakdown.l_v,
                    breakdown.l_g,
                    breakdown.l_gp,
                    breakdown.l_cp,
                )

    checkpoint = Checkpoint(
        net_config=net_cfg,
        train_config=train_cfg,
        normalizer=normalizer,
        class_weights=class_weights,
        parameters=net.parameters,
        adam=adam,
        manifest=manifest,
    )
    return TrainResult(checkpoint, curve, breakdown)


def _batches(reader: DatasetReader, plan, normalizer: Normalizer, prefetch: bool):
    if not prefetch:
        for indices in plan:
            yield make_batch(reader, indices, normalizer)
        return
    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = None
        for indices in plan:
            upcoming = pool.submit(make_batch, reader, indices, normalizer)
            if pending is not None:
                yield pending.result()
            pending = upcoming
        if pending is not None:
            yield pending.result()
