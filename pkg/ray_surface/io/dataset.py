"""On-disk layout of a rendered sequence.

    <root>/manifest.json
    <root>/frames/000000.png   preview, clipped to [0, 1]
    <root>/frames/000000.pfm   exact float32 frame
    <root>/depths/000000.pfm   along-ray depth, 0 where invalid
    <root>/poses.txt           camera-to-world poses
    <root>/surface.pfm         ground-truth ray surface
    <root>/mask.pfm            1 inside the camera image area, else 0
"""
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from matplotlib import image as mpimg

from ray_surface.core.geometry import Pose
from ray_surface.io.errors import FormatError
from ray_surface.io.pfm import read_pfm, write_pfm
from ray_surface.io.poses import read_poses, write_poses

MANIFEST_VERSION = 1
MANIFEST_FILE = "manifest.json"


def quantize(array) -> np.ndarray:
    """Round an array through float32, the precision stored on disk."""
    return np.asarray(array, dtype=np.float32).astype(np.float64)


def quantize_surface(rays) -> np.ndarray:
    """Float32-round unit rays and renormalize them in float64."""
    rays = quantize(rays)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


@dataclass
class Manifest:
    root: str
    frames: List[str]
    camera: Dict
    height: int
    width: int
    version: int = MANIFEST_VERSION
    extra: Dict = field(default_factory=dict)

    def frame_png(self, index: int) -> str:
        return os.path.join(self.root, "frames", f"{self.frames[index]}.png")

    def frame_pfm(self, index: int) -> str:
        return os.path.join(self.root, "frames", f"{self.frames[index]}.pfm")

    def depth_pfm(self, index: int) -> str:
        return os.path.join(self.root, "depths", f"{self.frames[index]}.pfm")

    @property
    def poses_path(self) -> str:
        return os.path.join(self.root, "poses.txt")

    @property
    def surface_path(self) -> str:
        return os.path.join(self.root, "surface.pfm")

    @property
    def mask_path(self) -> str:
        return os.path.join(self.root, "mask.pfm")

    def members(self) -> List[str]:
        paths = []
        for index in range(len(self.frames)):
            paths += [self.frame_pfm(index), self.depth_pfm(index)]
        return paths + [self.poses_path, self.surface_path, self.mask_path]

    def save(self) -> str:
        path = os.path.join(self.root, MANIFEST_FILE)
        content = {
            "version": self.version,
            "frames": self.frames,
            "camera": self.camera,
            "height": self.height,
            "width": self.width,
            **self.extra,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(content, f, indent=2)
        return path

    @classmethod
    def load(cls, root) -> "Manifest":
        path = os.path.join(root, MANIFEST_FILE)
        if not os.path.isfile(path):
            raise FormatError(path, "manifest", "file not found")
        try:
            with open(path, "r", encoding="utf-8") as f:
                content = json.load(f)
        except json.JSONDecodeError as error:
            raise FormatError(path, "manifest", f"invalid JSON: {error}")

        for key in ("version", "frames", "camera", "height", "width"):
            if key not in content:
                raise FormatError(path, key, "missing field")
        if content["version"] != MANIFEST_VERSION:
            raise FormatError(
                path, "version", f"unsupported version {content['version']}, expected {MANIFEST_VERSION}"
            )
        if len(content["frames"]) < 3:
            raise FormatError(path, "frames", "a sequence needs at least 3 frames")

        extra = {
            key: value
            for key, value in content.items()
            if key not in ("version", "frames", "camera", "height", "width")
        }
        manifest = cls(
            root=str(root),
            frames=[str(name) for name in content["frames"]],
            camera=dict(content["camera"]),
            height=int(content["height"]),
            width=int(content["width"]),
            version=content["version"],
            extra=extra,
        )
        for member in manifest.members():
            if not os.path.isfile(member):
                raise FormatError(member, "file", "listed in the manifest but missing")
        return manifest


def write_dataset(
    root,
    frames: Sequence[np.ndarray],
    depths: Sequence[np.ndarray],
    poses: Sequence[Pose],
    surface: np.ndarray,
    mask: np.ndarray,
    camera: Dict,
    **extra,
) -> Manifest:
    """Write frames (H, W, 3), depths (H, W), poses, rays (H, W, 3) and mask (H, W)."""
    if not len(frames) == len(depths) == len(poses):
        raise ValueError(f"got {len(frames)} frames, {len(depths)} depths and {len(poses)} poses")
    height, width = np.asarray(surface).shape[:2]

    os.makedirs(os.path.join(root, "frames"), exist_ok=True)
    os.makedirs(os.path.join(root, "depths"), exist_ok=True)
    manifest = Manifest(
        root=str(root),
        frames=[f"{index:06d}" for index in range(len(frames))],
        camera=camera,
        height=int(height),
        width=int(width),
        extra=extra,
    )

    for index, (frame, depth) in enumerate(zip(frames, depths)):
        write_pfm(manifest.frame_pfm(index), frame)
        write_pfm(manifest.depth_pfm(index), depth)
        mpimg.imsave(manifest.frame_png(index), np.clip(frame, 0.0, 1.0))
    write_poses(manifest.poses_path, poses)
    write_pfm(manifest.surface_path, surface)
    write_pfm(manifest.mask_path, np.asarray(mask, dtype=np.float32))
    manifest.save()
    return manifest


def read_dataset(
    root,
) -> Tuple[Manifest, List[np.ndarray], List[np.ndarray], List[Pose], np.ndarray, np.ndarray]:
    """Inverse of `write_dataset`; arrays come back as float64, the mask as bool."""
    manifest = Manifest.load(root)
    shape = (manifest.height, manifest.width)

    def load(path, channels):
        array = read_pfm(path).astype(np.float64)
        expected = shape if channels == 1 else shape + (channels,)
        if array.shape != expected:
            raise FormatError(path, "dimensions", f"expected {expected}, got {array.shape}")
        return array

    frames = [load(manifest.frame_pfm(i), 3) for i in range(len(manifest.frames))]
    depths = [load(manifest.depth_pfm(i), 1) for i in range(len(manifest.frames))]
    poses = read_poses(manifest.poses_path)
    if len(poses) != len(frames):
        raise FormatError(manifest.poses_path, "poses", f"expected {len(frames)} poses, got {len(poses)}")
    surface = quantize_surface(load(manifest.surface_path, 3))
    mask = load(manifest.mask_path, 1) > 0.5
    return manifest, frames, depths, poses, surface, mask
