import os
from typing import Optional, Tuple

import numpy as np
import open3d as o3d
import torch

from ray_surface.core.camera import RaySurface, ray_unproject
from ray_surface.core.grid import DTYPE, ImageGrid
from ray_surface.core.losses import ZeroValidPixelsError
from ray_surface.io.errors import FormatError


def to_point_cloud(points: np.ndarray, colors: np.ndarray) -> o3d.geometry.PointCloud:
    """Open3D cloud from (N, 3) positions and (N, 3) uint8 colors."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if len(points) != len(colors):
        raise ValueError(f"{len(points)} points but {len(colors)} colors")

    cloud = o3d.geometry.PointCloud()
    cloud.points = o3d.utility.Vector3dVector(points)
    cloud.colors = o3d.utility.Vector3dVector(colors / 255.0)
    return cloud


def write_ply(path, points: np.ndarray, colors: np.ndarray, binary: bool = False) -> None:
    cloud = to_point_cloud(points, colors)
    if not cloud.has_points():
        raise ZeroValidPixelsError(f"no vertex to write to {path}")
    if not o3d.io.write_point_cloud(str(path), cloud, write_ascii=not binary):
        raise OSError(f"could not write point cloud to {path}")


def read_ply(path) -> Tuple[np.ndarray, np.ndarray]:
    """Vertices of a colored PLY file as (N, 3) float64 points and uint8 colors."""
    if not os.path.isfile(path):
        raise FormatError(path, "file", "no such file")
    cloud = o3d.io.read_point_cloud(str(path), format="ply")
    if not cloud.has_points():
        raise FormatError(path, "element vertex", "no readable vertices")
    if not cloud.has_colors():
        raise FormatError(path, "property", "vertices carry no red, green, blue")

    points = np.asarray(cloud.points, dtype=np.float64)
    colors = np.round(np.asarray(cloud.colors) * 255).astype(np.uint8)
    return points, colors


def export_pointcloud(
    depth: ImageGrid,
    surface: RaySurface,
    image: ImageGrid,
    path,
    mask: Optional[np.ndarray] = None,
    binary: bool = False,
) -> int:
    """Write one colored vertex per valid pixel; returns the vertex count.

    A pixel is valid when its depth is finite and positive and, if given,
    `mask` is set. Raises `ZeroValidPixelsError` when no pixel is valid.
    """
    if (depth.height, depth.width) != (surface.height, surface.width) or (
        image.height,
        image.width,
    ) != (surface.height, surface.width):
        raise ValueError("depth, surface and image must share their size")

    values = depth.numpy()[..., 0]
    valid = np.isfinite(values) & (values > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)

    filled = np.where(valid, values, 1.0)
    with torch.no_grad():
        points = ray_unproject(surface, ImageGrid(torch.as_tensor(filled, dtype=DTYPE)[None]))
    points = points.numpy()[valid]

    rgb = image.numpy()
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    colors = np.round(np.clip(rgb[valid], 0.0, 1.0) * 255).astype(np.uint8)

    write_ply(path, points, colors, binary=binary)
    return int(valid.sum())
