# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Rigid transforms and kinematics of the 6-joint reference arm."""

import configparser
import io
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from randgrasp_config import JOINT_COUNT, RandgraspError, VelocityProfile

logger = logging.getLogger(__name__)

ARM_HEADER = "RANDGRASP-ARM v1"
REFERENCE_ARM_PATH = Path(__file__).parent / "arm_models" / "reference.arm"

TOL_POS = 1e-4
TOL_ROT = 1e-3
MAX_IK_ITERS = 200
MAX_JOINT_STEP = 0.5
LAMBDA_INIT = 1e-2
LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e3
RAMP_FRACTION = 0.2

GRASP_ORIENTATION = np.diag([-1.0, 1.0, -1.0])
"""Tool pointing straight down onto the table."""


class NoConvergence(RandgraspError):
    """Inverse kinematics did not reach the target within the iteration budget."""

    def __init__(self, message: str, best_angles: np.ndarray, residual: float):
        super().__init__(message)
        self.best_angles = best_angles
        self.residual = residual


class OutOfRange(RandgraspError):
    """A path was queried outside of its time span."""

    pass


class InvalidArmModelError(RandgraspError):
    """Arm model file or parameters are malformed."""

    pass


def _frozen(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform: rotation followed by translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, xyz: Sequence[float]) -> "Transform":
        return cls(np.eye(3), xyz)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Transform":
        matrix = np.asarray(matrix, dtype=float)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points of shape (3,) or (N, 3) through the transform."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def allclose(self, other: "Transform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def is_orthonormal(self, atol: float = 1e-9) -> bool:
        r = self.rotation
        orthogonal = np.allclose(r.T @ r, np.eye(3), atol=atol)
        return bool(orthogonal and abs(np.linalg.det(r) - 1) < atol)


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector (axis times angle) of a rotation matrix."""
    return Rotation.from_matrix(rotation).as_rotvec()


def rotation_exp(rotvec: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(rotvec).as_matrix()


def rotation_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle between two rotations."""
    return float(np.linalg.norm(rotation_log(a.T @ b)))


@dataclass(frozen=True, eq=False)
class Link:
    """Fixed offset from the previous joint frame, then a revolute joint about ``axis``."""

    offset: Transform
    axis: np.ndarray
    limits: Tuple[float, float]

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise InvalidArmModelError("joint axis must be non-zero")
        object.__setattr__(self, "axis", _frozen(axis / norm, (3,)))
        lo, hi = self.limits
        if lo >= hi:
            raise InvalidArmModelError(f"joint limits {self.limits} must satisfy lo < hi")


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Serial chain: base pose, six revolute links, tool offset."""

    links: Tuple[Link, ...]
    base_pose: Transform
    tool_offset: Transform
    home: np.ndarray
    name: str = "reference"
    _lower: np.ndarray = field(init=False, repr=False)
    _upper: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.links) != JOINT_COUNT:
            raise InvalidArmModelError(f"expected {JOINT_COUNT} links, got {len(self.links)}")
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "home", _frozen(self.home, (JOINT_COUNT,)))
        object.__setattr__(self, "_lower", _frozen([link.limits[0] for link in self.links], (6,)))
        object.__setattr__(self, "_upper", _frozen([link.limits[1] for link in self.links], (6,)))
        if not self.within_limits(self.home):
            raise InvalidArmModelError("home configuration violates joint limits")

    @property
    def joint_limits(self) -> np.ndarray:
        """(6, 2) array of lower and upper limits."""
        return np.stack([self._lower, self._upper], axis=1)

    def clamp(self, angles: np.ndarray) -> np.ndarray:
        return np.clip(angles, self._lower, self._upper)

    def within_limits(self, angles: np.ndarray, atol: float = 1e-12) -> bool:
        angles = np.asarray(angles)
        return bool(np.all(angles >= self._lower - atol) and np.all(angles <= self._upper + atol))

    def with_base_height(self, height: float) -> "ArmModel":
        """Copy of the arm with its base raised to ``height`` above the table."""
        base = Transform(self.base_pose.rotation, [*self.base_pose.translation[:2], height])
        return ArmModel(self.links, base, self.tool_offset, self.home, self.name)

    def scaled(self, factor: float) -> "ArmModel":
        """Copy of the arm with every length multiplied by ``factor``."""

        def scale(t: Transform) -> Transform:
            return Transform(t.rotation, t.translation * factor)

        links = tuple(Link(scale(link.offset), link.axis, link.limits) for link in self.links)
        return ArmModel(
            links, scale(self.base_pose), scale(self.tool_offset), self.home, self.name
        )


def _parse_vector(raw: str, size: int, key: str) -> List[float]:
    try:
        values = [float(v) for v in raw.split()]
    except ValueError:
        raise InvalidArmModelError(f"{key}: expected numbers, got {raw!r}") from None
    if len(values) != size:
        raise InvalidArmModelError(f"{key}: expected {size} values, got {len(values)}")
    return values


def parse_arm_model(text: str) -> ArmModel:
    """Parse an arm description document."""
    first, _, body = text.partition("\n")
    if first.strip() != ARM_HEADER:
        raise InvalidArmModelError(f"expected header {ARM_HEADER!r}, found {first.strip()!r}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(body)
        arm = parser["arm"]
        links = []
        for index in range(1, JOINT_COUNT + 1):
            section = parser[f"link {index}"]
            links.append(
                Link(
                    offset=Transform.from_translation(
                        _parse_vector(section["offset"], 3, f"link {index} offset")
                    ),
                    axis=np.array(_parse_vector(section["axis"], 3, f"link {index} axis")),
                    limits=tuple(_parse_vector(section["limits"], 2, f"link {index} limits")),
                )
            )
        return ArmModel(
            links=tuple(links),
            base_pose=Transform.from_translation(_parse_vector(arm["base"], 3, "base")),
            tool_offset=Transform.from_translation(_parse_vector(arm["tool"], 3, "tool")),
            home=np.array(_parse_vector(arm["home"], JOINT_COUNT, "home")),
            name=arm.get("name", "unnamed"),
        )
    except KeyError as e:
        raise InvalidArmModelError(f"missing section or key {e}") from None
    except configparser.Error as e:
        raise InvalidArmModelError(str(e)) from e


def load_arm_model(path: Union[str, Path]) -> ArmModel:
    return parse_arm_model(Path(path).read_text())


def _format_vector(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dump_arm_model(model: ArmModel) -> str:
    """Serialize an arm with translation-only offsets."""
    parser = configparser.ConfigParser()
    parser["arm"] = {
        "name": model.name,
        "base": _format_vector(model.base_pose.translation),
        "tool": _format_vector(model.tool_offset.translation),
        "home": _format_vector(model.home),
    }
    for index, link in enumerate(model.links, start=1):
        parser[f"link {index}"] = {
            "offset": _format_vector(link.offset.translation),
            "axis": _format_vector(link.axis),
            "limits": _format_vector(link.limits),
        }
    buffer = io.StringIO()
    parser.write(buffer)
    return f"{ARM_HEADER}\n{buffer.getvalue()}"


def save_arm_model(model: ArmModel, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_arm_model(model))


@lru_cache(maxsize=1)
def reference_arm() -> ArmModel:
    """The bundled reference arm."""
    return load_arm_model(REFERENCE_ARM_PATH)


def _chain(model: ArmModel, angles: np.ndarray):
    frame = model.base_pose.as_matrix()
    origins = np.empty((JOINT_COUNT, 3))
    axes = np.empty((JOINT_COUNT, 3))
    joint = np.eye(4)
    for i, (link, q) in enumerate(zip(model.links, angles)):
        frame = frame @ link.offset.as_matrix()
        origins[i] = frame[:3, 3]
        axes[i] = frame[:3, :3] @ link.axis
        joint[:3, :3] = axis_angle_matrix(link.axis, q)
        frame = frame @ joint
    frame = frame @ model.tool_offset.as_matrix()
    return Transform.from_matrix(frame), origins, axes


def forward_kinematics(model: ArmModel, angles: np.ndarray) -> Transform:
    """Tool pose in the world frame."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (JOINT_COUNT,):
        raise ValueError(f"expected {JOINT_COUNT} joint angles, got shape {angles.shape}")
    return _chain(model, angles)[0]


def joint_origins(model: ArmModel, angles: np.ndarray) -> Tuple[np.ndarray, Transform]:
    """World positions of every joint plus the tool pose."""
    tip, origins, _ = _chain(model, np.asarray(angles, dtype=float))
    return origins, tip


def jacobian(model: ArmModel, angles: np.ndarray) -> np.ndarray:
    """Geometric 6x6 Jacobian; rows 0-2 linear, rows 3-5 angular, world frame."""
    tip, origins, axes = _chain(model, np.asarray(angles, dtype=float))
    out = np.empty((6, JOINT_COUNT))
    out[:3] = np.cross(axes, tip.translation - origins).T
    out[3:] = axes.T
    return out


def pose_error(target: Transform, current: Transform) -> np.ndarray:
    """Stacked position and rotation-vector error, both in the world frame."""
    err = np.empty(6)
    err[:3] = target.translation - current.translation
    err[3:] = rotation_log(target.rotation @ current.rotation.T)
    return err


def _converged(err: np.ndarray, tol_pos: float, tol_rot: float) -> bool:
    return np.linalg.norm(err[:3]) <= tol_pos and np.linalg.norm(err[3:]) <= tol_rot


def solve_ik(
    model: ArmModel,
    target: Transform,
    seed: np.ndarray,
    tol_pos: float = TOL_POS,
    tol_rot: float = TOL_ROT,
    max_iters: int = MAX_IK_ITERS,
) -> np.ndarray:
    """Damped least squares IK with adaptive damping.

    Steps are capped at MAX_JOINT_STEP rad, clamped to the joint limits and kept only if
    they reduce the residual; the damping halves on success and doubles on rejection.
    """
    q = model.clamp(np.asarray(seed, dtype=float))
    err = pose_error(target, forward_kinematics(model, q))
    if _converged(err, tol_pos, tol_rot):
        return q
    residual = float(np.linalg.norm(err))
    lam = LAMBDA_INIT
    identity = np.eye(6)
    for _ in range(max_iters):
        jac = jacobian(model, q)
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam**2 * identity, err)
        largest = np.max(np.abs(dq))
        if largest > MAX_JOINT_STEP:
            dq *= MAX_JOINT_STEP / largest
        candidate = model.clamp(q + dq)
        cand_err = pose_error(target, forward_kinematics(model, candidate))
        cand_residual = float(np.linalg.norm(cand_err))
        if cand_residual < residual:
            q, err, residual = candidate, cand_err, cand_residual
            lam = max(lam / 2.0, LAMBDA_MIN)
            if _converged(err, tol_pos, tol_rot):
                return q
        else:
            lam = min(lam * 2.0, LAMBDA_MAX)
    raise NoConvergence(
        f"IK residual {residual:.3g} after {max_iters} iterations",
        best_angles=q,
        residual=residual,
    )


@dataclass(frozen=True, eq=False)
class CartesianPath:
    """Straight-line tool motion between two poses."""

    start: Transform
    end: Transform
    duration: float
    profile: VelocityProfile = VelocityProfile.trapezoidal
    ramp_fraction: float = RAMP_FRACTION

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("path duration must be non-negative")
        if not 0 < self.ramp_fraction <= 0.5:
            raise ValueError("ramp fraction must lie in (0, 0.5]")


def _progress(profile: VelocityProfile, tau: float, ramp: float) -> float:
    if profile is VelocityProfile.constant:
        return tau
    peak = 1.0 / (1.0 - ramp)
    if tau < ramp:
        return 0.5 * peak * tau * tau / ramp
    if tau > 1.0 - ramp:
        rest = 1.0 - tau
        return 1.0 - 0.5 * peak * rest * rest / ramp
    return peak * (tau - 0.5 * ramp)


def interpolate_path(path: CartesianPath, t: float) -> Transform:
    """Pose along ``path`` at time ``t``; endpoints are returned exactly."""
    if t < 0 or t > path.duration:
        raise OutOfRange(f"t={t} outside of [0, {path.duration}]")
    if t == 0:
        return path.start
    if t == path.duration:
        return path.end
    s = _progress(path.profile, t / path.duration, path.ramp_fraction)
    r0 = path.start.rotation
    relative = rotation_log(r0.T @ path.end.rotation)
    rotation = r0 @ rotation_exp(s * relative)
    translation = (1.0 - s) * path.start.translation + s * path.end.translation
    return Transform(rotation, translation)


@dataclass(frozen=True, eq=False)
class JointState:
    """Joint angles at a time sample and the velocity held until the next one."""

    time: float
    angles: np.ndarray
    velocities: np.ndarray


def sample_count(duration: float, dt: float) -> int:
    return int(math.ceil(duration / dt - 1e-9)) + 1


def path_to_joint_trajectory(
    model: ArmModel,
    path: CartesianPath,
    q0: np.ndarray,
    dt: float,
    tol_pos: float = TOL_POS,
    tol_rot: float = TOL_ROT,
) -> List[JointState]:
    """Solve IK along ``path`` every ``dt``, each solve seeded with the previous solution.

    Velocities are forward differences; the final state has zero velocity. Raises
    NoConvergence if any sample fails.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    count = sample_count(path.duration, dt)
    times = [min(k * dt, path.duration) for k in range(count)]
    angles: List[np.ndarray] = []
    seed = np.asarray(q0, dtype=float)
    for t in times:
        seed = solve_ik(model, interpolate_path(path, t), seed, tol_pos, tol_rot)
        angles.append(seed)
    states = []
    for k, t in enumerate(times):
        if k + 1 < count:
            step = times[k + 1] - t
            velocity = (angles[k + 1] - angles[k]) / step if step > 0 else np.zeros(JOINT_COUNT)
        else:
            velocity = np.zeros(JOINT_COUNT)
        states.append(JointState(t, angles[k], velocity))
    return states


def tip_position(model: ArmModel, angles: np.ndarray, offset: Optional[np.ndarray] = None):
    """World position of the tool tip, optionally shifted by a tool-frame offset."""
    tip = forward_kinematics(model, angles)
    if offset is None:
        return tip.translation.copy()
    return tip.apply(offset)
