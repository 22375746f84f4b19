"""Closed-form cameras used to render ground truth.

Camera frame: x right, y down, z forward. Pixel (u, v) is the center of
column u, row v.
"""
from abc import abstractmethod
from typing import Dict, Tuple

import numpy as np
import torch

from ray_surface.core.camera import Intrinsics, RaySurface, pixel_lattice


class OracleCamera:
    kind: str = None

    def __init__(self, **kwargs):
        pass

    @abstractmethod
    def rays(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Unit rays (..., 3) for pixels (..., 2) and a mask of pixels inside the image area."""
        pass

    @abstractmethod
    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Pixels (..., 2) of points (..., 3) and a mask of points the camera sees."""
        pass

    @abstractmethod
    def params(self) -> Dict:
        pass

    def to_dict(self) -> Dict:
        return {"kind": self.kind, **self.params()}


class PinholeCamera(OracleCamera):
    kind = "pinhole"

    def __init__(self, fx: float, fy: float, cx: float, cy: float, **kwargs):
        super().__init__()
        self.K = Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy)

    @classmethod
    def default(cls, height: int, width: int) -> "PinholeCamera":
        K = Intrinsics.default(height, width)
        return cls(K.fx, K.fy, K.cx, K.cy)

    def rays(self, pixels):
        pixels = np.asarray(pixels, dtype=np.float64)
        x = (pixels[..., 0] - self.K.cx) / self.K.fx
        y = (pixels[..., 1] - self.K.cy) / self.K.fy
        directions = np.stack([x, y, np.ones_like(x)], axis=-1)
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        return directions, np.ones(pixels.shape[:-1], dtype=bool)

    def project(self, points):
        points = np.asarray(points, dtype=np.float64)
        z = points[..., 2]
        in_front = z > 0
        safe = np.where(in_front, z, 1.0)
        u = self.K.fx * points[..., 0] / safe + self.K.cx
        v = self.K.fy * points[..., 1] / safe + self.K.cy
        return np.stack([u, v], axis=-1), in_front

    def params(self):
        return {"fx": self.K.fx, "fy": self.K.fy, "cx": self.K.cx, "cy": self.K.cy}


class EquidistantFisheye(OracleCamera):
    """r = f * theta, with theta the angle from the optical axis.

    Pixels beyond `max_theta` lie outside the image circle; their rays follow
    the same law (capped at pi) but are flagged.
    """

    kind = "fisheye"

    def __init__(self, f: float, cx: float, cy: float, max_theta: float = np.pi / 2, **kwargs):
        super().__init__()
        if f <= 0 or not 0 < max_theta <= np.pi:
            raise ValueError(f"invalid fisheye parameters f={f}, max_theta={max_theta}")
        self.f, self.cx, self.cy, self.max_theta = f, cx, cy, max_theta

    @classmethod
    def default(cls, height: int, width: int) -> "EquidistantFisheye":
        """180 degree field of view whose circle touches the shorter image side."""
        radius = min(height, width) / 2
        return cls(f=radius / (np.pi / 2), cx=width / 2, cy=height / 2)

    def rays(self, pixels):
        pixels = np.asarray(pixels, dtype=np.float64)
        dx, dy = pixels[..., 0] - self.cx, pixels[..., 1] - self.cy
        theta = np.hypot(dx, dy) / self.f
        inside = theta <= self.max_theta
        theta = np.minimum(theta, np.pi)
        phi = np.arctan2(dy, dx)
        directions = np.stack(
            [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1
        )
        return directions, inside

    def project(self, points):
        points = np.asarray(points, dtype=np.float64)
        norm = np.linalg.norm(points, axis=-1)
        theta = np.arccos(np.clip(points[..., 2] / np.maximum(norm, 1e-300), -1.0, 1.0))
        phi = np.arctan2(points[..., 1], points[..., 0])
        r = self.f * theta
        pixels = np.stack([self.cx + r * np.cos(phi), self.cy + r * np.sin(phi)], axis=-1)
        return pixels, (theta <= self.max_theta) & (norm > 0)

    def params(self):
        return {"f": self.f, "cx": self.cx, "cy": self.cy, "max_theta": self.max_theta}


class EquiangularCatadioptric(OracleCamera):
    """Mirror camera whose ray elevation grows linearly with image radius.

    The mirror axis is the camera z axis: a pixel at radius r and azimuth
    phi looks along (cos e cos phi, cos e sin phi, sin e) with
    e = elev_min + (elev_max - elev_min) (r - r_min) / (r_max - r_min).
    Pixels outside the annulus [r_min, r_max] are flagged; their elevation
    follows the same line, clamped to [-pi/2, pi/2].
    """

    kind = "catadioptric"

    def __init__(
        self,
        cx: float,
        cy: float,
        r_min: float,
        r_max: float,
        elev_min: float = -0.35,
        elev_max: float = 0.6,
        **kwargs,
    ):
        super().__init__()
        if not 0 <= r_min < r_max or not -np.pi / 2 <= elev_min < elev_max <= np.pi / 2:
            raise ValueError("invalid catadioptric radius or elevation range")
        self.cx, self.cy = cx, cy
        self.r_min, self.r_max = r_min, r_max
        self.elev_min, self.elev_max = elev_min, elev_max

    @classmethod
    def default(cls, height: int, width: int) -> "EquiangularCatadioptric":
        r_max = min(height, width) / 2 - 1
        return cls(cx=width / 2, cy=height / 2, r_min=0.375 * r_max, r_max=r_max)

    @property
    def slope(self) -> float:
        return (self.elev_max - self.elev_min) / (self.r_max - self.r_min)

    def rays(self, pixels):
        pixels = np.asarray(pixels, dtype=np.float64)
        dx, dy = pixels[..., 0] - self.cx, pixels[..., 1] - self.cy
        r = np.hypot(dx, dy)
        inside = (r >= self.r_min) & (r <= self.r_max)
        elevation = np.clip(self.elev_min + self.slope * (r - self.r_min), -np.pi / 2, np.pi / 2)
        phi = np.arctan2(dy, dx)
        directions = np.stack(
            [np.cos(elevation) * np.cos(phi), np.cos(elevation) * np.sin(phi), np.sin(elevation)],
            axis=-1,
        )
        return directions, inside

    def project(self, points):
        points = np.asarray(points, dtype=np.float64)
        planar = np.hypot(points[..., 0], points[..., 1])
        elevation = np.arctan2(points[..., 2], planar)
        phi = np.arctan2(points[..., 1], points[..., 0])
        r = self.r_min + (elevation - self.elev_min) / self.slope
        pixels = np.stack([self.cx + r * np.cos(phi), self.cy + r * np.sin(phi)], axis=-1)
        seen = (elevation >= self.elev_min) & (elevation <= self.elev_max) & (planar > 0)
        return pixels, seen

    def params(self):
        return {
            "cx": self.cx,
            "cy": self.cy,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "elev_min": self.elev_min,
            "elev_max": self.elev_max,
        }


CAMERAS = {
    camera.kind: camera for camera in (PinholeCamera, EquidistantFisheye, EquiangularCatadioptric)
}


def camera_from_dict(config: Dict) -> OracleCamera:
    config = dict(config)
    kind = config.pop("kind", None)
    if kind not in CAMERAS:
        raise ValueError(f"unknown camera kind '{kind}', expected one of {sorted(CAMERAS)}")
    return CAMERAS[kind](**config)


def default_camera(kind: str, height: int, width: int) -> OracleCamera:
    if kind not in CAMERAS:
        raise ValueError(f"unknown camera kind '{kind}', expected one of {sorted(CAMERAS)}")
    return CAMERAS[kind].default(height, width)


def oracle_ray_surface(camera: OracleCamera, height: int, width: int) -> Tuple[RaySurface, np.ndarray]:
    """Exact per-pixel rays and the mask of pixels inside the image area."""
    pixels = pixel_lattice(height, width).numpy()
    directions, inside = camera.rays(pixels)
    return RaySurface.from_directions(torch.from_numpy(directions)), inside
