import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np
import torch

from ray_surface.core.camera import RaySurface, pixel_lattice
from ray_surface.core.geometry import Pose, PoseParams, euler_to_pose, pose_compose
from ray_surface.core.grid import DTYPE, ImageGrid
from ray_surface.io.dataset import Manifest, quantize, quantize_surface, read_dataset, write_dataset
from ray_surface.scenarios.cameras import OracleCamera, camera_from_dict
from ray_surface.scenarios.scene import Scene, render


@dataclass
class SyntheticSequence:
    """Rendered frames with exact along-ray depth, camera-to-world poses and rays.

    Arrays carry float32 precision, so writing and reloading a sequence
    reproduces it exactly.
    """

    frames: List[ImageGrid]
    depths: List[ImageGrid]
    poses: List[Pose]
    surface: RaySurface
    mask: np.ndarray
    camera: OracleCamera

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.surface.height

    @property
    def width(self) -> int:
        return self.surface.width


def from_deltas(deltas: Sequence[Pose], start: Pose = None) -> List[Pose]:
    """Camera-to-world poses reached by applying each delta in the current camera frame."""
    poses = [start if start is not None else Pose.identity()]
    for delta in deltas:
        poses.append(pose_compose(poses[-1], delta))
    return poses


def _constant_motion(frames: int, translation, euler) -> List[Pose]:
    if frames < 1:
        raise ValueError(f"a trajectory needs at least one frame, got {frames}")
    delta = euler_to_pose(
        PoseParams(torch.tensor(translation, dtype=DTYPE), torch.tensor(euler, dtype=DTYPE))
    )
    return from_deltas([delta] * (frames - 1))


def forward_trajectory(frames: int, step: float = 0.05, **kwargs) -> List[Pose]:
    return _constant_motion(frames, (0.0, 0.0, step), (0.0, 0.0, 0.0))


def lateral_trajectory(frames: int, step: float = 0.05, **kwargs) -> List[Pose]:
    return _constant_motion(frames, (step, 0.0, 0.0), (0.0, 0.0, 0.0))


def orbit_trajectory(frames: int, step: float = 0.05, turn: float = 0.03, **kwargs) -> List[Pose]:
    """Sideways steps while panning about the vertical (y) axis."""
    return _constant_motion(frames, (step, 0.0, 0.0), (0.0, -turn, 0.0))


def static_trajectory(frames: int, **kwargs) -> List[Pose]:
    return _constant_motion(frames, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


TRAJECTORIES: Dict[str, Callable[..., List[Pose]]] = {
    "forward": forward_trajectory,
    "lateral": lateral_trajectory,
    "orbit": orbit_trajectory,
    "static": static_trajectory,
}


def render_sequence(
    scene: Scene, camera: OracleCamera, trajectory: Sequence[Pose], height: int, width: int
) -> SyntheticSequence:
    if len(trajectory) < 3:
        raise ValueError(f"a sequence needs at least 3 poses, got {len(trajectory)}")

    directions, inside = camera.rays(pixel_lattice(height, width).numpy())
    surface = RaySurface(torch.from_numpy(quantize_surface(directions)))

    frames, depths = [], []
    for pose in trajectory:
        image, depth = render(scene, camera, pose, height, width)
        frames.append(ImageGrid.from_numpy(quantize(image.numpy())))
        depths.append(ImageGrid.from_numpy(quantize(depth.numpy())))

    poses = [Pose.from_matrix(pose.matrix()) for pose in trajectory]
    return SyntheticSequence(frames, depths, poses, surface, inside, camera)


def save_sequence(sequence: SyntheticSequence, root, **extra) -> Manifest:
    # rays go to disk unnormalized so reloading renormalizes the same float32 values
    directions, _ = sequence.camera.rays(pixel_lattice(sequence.height, sequence.width).numpy())
    return write_dataset(
        root,
        frames=[frame.numpy() for frame in sequence.frames],
        depths=[depth.numpy()[..., 0] for depth in sequence.depths],
        poses=sequence.poses,
        surface=directions,
        mask=sequence.mask,
        camera=sequence.camera.to_dict(),
        **extra,
    )


def make_sequence(
    scene: Scene,
    camera: OracleCamera,
    trajectory: Sequence[Pose],
    height: int,
    width: int,
    root,
    **extra,
) -> SyntheticSequence:
    """Render a sequence and write it as a dataset under `root`."""
    sequence = render_sequence(scene, camera, trajectory, height, width)
    manifest = save_sequence(sequence, root, **extra)
    logging.info(
        f"Wrote {len(sequence)} {camera.kind} frames of {width}x{height} to {manifest.root}"
    )
    return sequence


def load_sequence(root) -> SyntheticSequence:
    manifest, frames, depths, poses, surface, mask = read_dataset(root)
    return SyntheticSequence(
        frames=[ImageGrid.from_numpy(frame) for frame in frames],
        depths=[ImageGrid.from_numpy(depth) for depth in depths],
        poses=poses,
        surface=RaySurface(torch.from_numpy(surface)),
        mask=mask,
        camera=camera_from_dict(manifest.camera),
    )
