from typing import List, Sequence

import numpy as np

from ray_surface.core.geometry import Pose
from ray_surface.io.errors import FormatError


def write_poses(path, poses: Sequence[Pose]) -> None:
    """One row-major 3x4 [R | t] matrix per line, 12 numbers."""
    with open(path, "w", encoding="utf-8") as f:
        for pose in poses:
            matrix = pose.matrix() if isinstance(pose, Pose) else np.asarray(pose)[:3, :4]
            f.write(" ".join(f"{value:.17g}" for value in matrix.reshape(-1)) + "\n")


def read_poses(path) -> List[Pose]:
    poses = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 12:
                raise FormatError(path, f"line {number}", f"expected 12 numbers, got {len(fields)}")
            try:
                values = np.array([float(x) for x in fields])
            except ValueError:
                raise FormatError(path, f"line {number}", "non-numeric entry")
            if not np.isfinite(values).all():
                raise FormatError(path, f"line {number}", "non-finite entry")
            poses.append(Pose.from_matrix(values.reshape(3, 4)))
    return poses
