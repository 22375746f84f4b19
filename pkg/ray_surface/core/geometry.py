from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ray_surface.core.grid import DTYPE

# tolerance on R^T R = I and det(R) = 1
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class PoseParams:
    """Six pose parameters: (x, y, z) translation and (roll, pitch, yaw) radians.

    Angles compose as intrinsic rotations about X, then the new Y, then the
    new Z axis, i.e. R = Rx(roll) @ Ry(pitch) @ Rz(yaw).
    """

    translation: torch.Tensor
    euler: torch.Tensor

    def __post_init__(self):
        if self.translation.shape[-1] != 3 or self.euler.shape[-1] != 3:
            raise ValueError("PoseParams expects 3-vectors for translation and euler")

    @classmethod
    def zeros(cls) -> "PoseParams":
        return cls(torch.zeros(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    @classmethod
    def from_vector(cls, vector: torch.Tensor) -> "PoseParams":
        """Split a 6-vector laid out as (x, y, z, roll, pitch, yaw)."""
        vector = torch.as_tensor(vector, dtype=DTYPE)
        return cls(vector[..., :3], vector[..., 3:6])

    def vector(self) -> torch.Tensor:
        return torch.cat([self.translation, self.euler], dim=-1)


@dataclass(frozen=True)
class Pose:
    """Rigid transform P -> R @ P + t."""

    rotation: torch.Tensor
    translation: torch.Tensor

    @classmethod
    def identity(cls) -> "Pose":
        return cls(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        """Build from a 3x4 (or 4x4) [R | t] matrix."""
        matrix = torch.as_tensor(np.asarray(matrix, dtype=np.float64))
        return cls(matrix[:3, :3].clone(), matrix[:3, 3].clone())

    def matrix(self) -> np.ndarray:
        """3x4 row-major [R | t] as a numpy array."""
        rotation = self.rotation.detach().cpu().numpy()
        translation = self.translation.detach().cpu().numpy()
        return np.concatenate([rotation, translation[:, None]], axis=1)

    def is_valid(self, tol: float = ORTHONORMAL_TOL) -> bool:
        rot = self.rotation.detach()
        eye = torch.eye(3, dtype=rot.dtype)
        orthonormal = torch.allclose(rot.T @ rot, eye, atol=tol, rtol=0.0)
        return orthonormal and abs(float(torch.det(rot)) - 1.0) <= tol


def _elemental(angle: torch.Tensor, axis: int) -> torch.Tensor:
    c, s = torch.cos(angle), torch.sin(angle)
    one, zero = torch.ones_like(angle), torch.zeros_like(angle)
    if axis == 0:
        rows = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    elif axis == 1:
        rows = [[c, zero, s], [zero, one, zero], [-s, zero, c]]
    else:
        rows = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    return torch.stack([torch.stack(row, dim=-1) for row in rows], dim=-2)


def euler_to_pose(params: PoseParams) -> Pose:
    euler = torch.as_tensor(params.euler, dtype=DTYPE)
    translation = torch.as_tensor(params.translation, dtype=DTYPE)
    if not (torch.isfinite(euler).all() and torch.isfinite(translation).all()):
        raise ValueError("euler_to_pose requires finite parameters")

    roll, pitch, yaw = euler[..., 0], euler[..., 1], euler[..., 2]
    rotation = _elemental(roll, 0) @ _elemental(pitch, 1) @ _elemental(yaw, 2)
    return Pose(rotation, translation)


def pose_to_euler(pose: Pose) -> PoseParams:
    """Inverse of `euler_to_pose`; pitch is recovered in [-pi/2, pi/2]."""
    rot = pose.rotation
    pitch = torch.asin(rot[..., 0, 2].clamp(-1.0, 1.0))
    roll = torch.atan2(-rot[..., 1, 2], rot[..., 2, 2])
    yaw = torch.atan2(-rot[..., 0, 1], rot[..., 0, 0])
    return PoseParams(pose.translation.clone(), torch.stack([roll, pitch, yaw], -1))


def transform_points(pose: Pose, points: torch.Tensor) -> torch.Tensor:
    """Apply R @ P + t to points of shape (..., 3)."""
    points = torch.as_tensor(points, dtype=DTYPE)
    return points @ pose.rotation.transpose(-1, -2) + pose.translation


def pose_inverse(pose: Pose) -> Pose:
    rot_t = pose.rotation.transpose(-1, -2)
    return Pose(rot_t, -(rot_t @ pose.translation.unsqueeze(-1)).squeeze(-1))


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Pose applying `b` first and `a` second."""
    rotation = a.rotation @ b.rotation
    translation = (a.rotation @ b.translation.unsqueeze(-1)).squeeze(-1) + a.translation
    return Pose(rotation, translation)


def relative_pose(source: Pose, target: Pose) -> Pose:
    """Transform from `source`'s camera frame into `target`'s camera frame.

    Both poses are camera-to-world.
    """
    return pose_compose(pose_inverse(target), source)


def chain(poses: Sequence[Pose]) -> Pose:
    """Compose poses left to right: chain([a, b, c]) = a o b o c."""
    result = Pose.identity()
    for pose in poses:
        result = pose_compose(result, pose)
    return result
