from abc import abstractmethod
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ray_surface.core.camera import pixel_lattice
from ray_surface.core.geometry import Pose
from ray_surface.core.grid import ImageGrid
from ray_surface.scenarios.cameras import OracleCamera

# hits closer than this to the ray origin are ignored
MIN_HIT = 1e-9


class Texture:
    """Solid texture: a color field over world points, continuous across faces."""

    def __init__(self, **kwargs):
        pass

    @abstractmethod
    def color(self, points: np.ndarray) -> np.ndarray:
        """RGB in [0, 1] at world points (N, 3)."""
        pass


class SineChecker(Texture):
    """Two colors blended by a product of sines along two world axes."""

    def __init__(
        self,
        period: float = 0.9,
        axis_s=(1.0, 0.0, 0.0),
        axis_t=(0.0, 1.0, 0.0),
        color_a=(0.15, 0.25, 0.55),
        color_b=(0.9, 0.75, 0.35),
        **kwargs,
    ):
        super().__init__()
        self.period = period
        self.axis_s, self.axis_t = np.asarray(axis_s, float), np.asarray(axis_t, float)
        self.color_a, self.color_b = np.asarray(color_a, float), np.asarray(color_b, float)

    def color(self, points):
        k = 2 * np.pi / self.period
        w = 0.5 + 0.5 * np.sin(k * points @ self.axis_s) * np.sin(k * points @ self.axis_t)
        return self.color_a * (1 - w[:, None]) + self.color_b * w[:, None]


class SmoothNoise(Texture):
    """Seeded sum of 3D plane waves, none shorter than `min_wavelength`."""

    def __init__(
        self,
        seed: int = 0,
        min_wavelength: float = 0.9,
        waves: int = 8,
        contrast: float = 0.3,
        **kwargs,
    ):
        super().__init__()
        rng = np.random.default_rng(seed)
        directions = rng.normal(size=(waves, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        wavelengths = rng.uniform(min_wavelength, 2.5 * min_wavelength, waves)
        self.frequencies = directions / wavelengths[:, None]
        self.phases = rng.uniform(0, 2 * np.pi, waves)
        mixing = rng.uniform(0.3, 1.0, (3, waves))
        self.mixing = contrast * mixing / mixing.sum(axis=1, keepdims=True)
        self.base = rng.uniform(0.4, 0.6, 3)

    def color(self, points):
        waves = np.sin(2 * np.pi * points @ self.frequencies.T + self.phases)
        return np.clip(self.base + waves @ self.mixing.T, 0.0, 1.0)


class Primitive:
    def __init__(self, texture: Texture, **kwargs):
        self.texture = texture

    @abstractmethod
    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Ray parameter of the nearest hit for (N, 3) rays, inf on a miss."""
        pass

    @abstractmethod
    def distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance of points (N, 3) to the primitive's surface."""
        pass


class Plane(Primitive):
    """Plane through `point` with normal `normal`.

    `extents` bounds it to a rectangle centered on `point`, spanned by
    `axis_u` and normal x axis_u.
    """

    def __init__(
        self,
        point,
        normal,
        texture: Texture,
        axis_u=(1.0, 0.0, 0.0),
        extents: Optional[Tuple[float, float]] = None,
        **kwargs,
    ):
        super().__init__(texture)
        self.point = np.asarray(point, float)
        self.normal = np.asarray(normal, float) / np.linalg.norm(normal)
        axis_u = np.asarray(axis_u, float)
        axis_u = axis_u - axis_u @ self.normal * self.normal
        if np.linalg.norm(axis_u) < 1e-12:
            raise ValueError("plane axis_u must not be parallel to its normal")
        self.axis_u = axis_u / np.linalg.norm(axis_u)
        self.axis_v = np.cross(self.normal, self.axis_u)
        self.extents = extents

    def intersect(self, origins, directions):
        denom = directions @ self.normal
        parallel = np.abs(denom) < 1e-15
        t = ((self.point - origins) @ self.normal) / np.where(parallel, 1.0, denom)
        hit = ~parallel & (t > MIN_HIT)
        if self.extents is not None:
            local = origins + np.where(hit, t, 0.0)[:, None] * directions - self.point
            hit &= np.abs(local @ self.axis_u) <= self.extents[0]
            hit &= np.abs(local @ self.axis_v) <= self.extents[1]
        return np.where(hit, t, np.inf)

    def distance(self, points):
        local = points - self.point
        normal = np.abs(local @ self.normal)
        if self.extents is None:
            return normal
        excess_u = np.maximum(np.abs(local @ self.axis_u) - self.extents[0], 0.0)
        excess_v = np.maximum(np.abs(local @ self.axis_v) - self.extents[1], 0.0)
        return np.sqrt(normal**2 + excess_u**2 + excess_v**2)


class Box(Primitive):
    """Axis-aligned box, hit from outside or from within (slab method)."""

    def __init__(self, lower, upper, texture: Texture, **kwargs):
        super().__init__(texture)
        self.lower, self.upper = np.asarray(lower, float), np.asarray(upper, float)
        if not np.all(self.lower < self.upper):
            raise ValueError(f"box lower corner {lower} must lie below upper corner {upper}")

    def intersect(self, origins, directions):
        safe = np.where(np.abs(directions) < 1e-15, 1e-15, directions)
        t1 = (self.lower - origins) / safe
        t2 = (self.upper - origins) / safe
        t_near = np.minimum(t1, t2).max(axis=1)
        t_far = np.maximum(t1, t2).min(axis=1)

        overlap = t_near <= t_far
        outside_hit = overlap & (t_near > MIN_HIT)
        inside_hit = overlap & ~outside_hit & (t_far > MIN_HIT)
        return np.where(outside_hit, t_near, np.where(inside_hit, t_far, np.inf))

    def distance(self, points):
        below, above = self.lower - points, points - self.upper
        outside = np.linalg.norm(np.maximum(np.maximum(below, above), 0.0), axis=1)
        inside = np.minimum(np.abs(below), np.abs(above)).min(axis=1)
        contained = np.all((below <= 0) & (above <= 0), axis=1)
        return np.where(contained, inside, outside)


class Scene:
    def __init__(self, primitives: Sequence[Primitive] = (), background=(0.0, 0.0, 0.0)):
        self.primitives: List[Primitive] = list(primitives)
        self.background = np.asarray(background, float)

    def cast(self, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest-hit ray parameter (inf on a miss) and color for (N, 3) rays."""
        origins = np.broadcast_to(origins, directions.shape)
        best = np.full(len(directions), np.inf)
        owner = np.full(len(directions), -1)
        for index, primitive in enumerate(self.primitives):
            t = primitive.intersect(origins, directions)
            closer = t < best
            best = np.where(closer, t, best)
            owner = np.where(closer, index, owner)

        colors = np.tile(self.background, (len(directions), 1))
        points = origins + np.where(np.isfinite(best), best, 0.0)[:, None] * directions
        for index, primitive in enumerate(self.primitives):
            hit = owner == index
            if hit.any():
                colors[hit] = primitive.texture.color(points[hit])
        return best, colors

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance of world points (N, 3) to the closest primitive surface."""
        if not self.primitives:
            return np.full(len(points), np.inf)
        return np.min([primitive.distance(points) for primitive in self.primitives], axis=0)


def render(
    scene: Scene, camera: OracleCamera, pose: Pose, height: int, width: int
) -> Tuple[ImageGrid, ImageGrid]:
    """Ray cast one frame from a camera-to-world `pose`.

    Depth is the distance along each unit ray, not the z coordinate; 0 marks
    pixels without a hit or outside the camera's image area, which show the
    background color.
    """
    pixels = pixel_lattice(height, width).numpy().reshape(-1, 2)
    directions, inside = camera.rays(pixels)

    rotation = pose.rotation.detach().numpy()
    center = pose.translation.detach().numpy()
    world = directions @ rotation.T

    distance, colors = scene.cast(center, world)
    hit = np.isfinite(distance) & inside
    colors[~hit] = scene.background
    depth = np.where(hit, distance, 0.0)

    image = ImageGrid.from_numpy(colors.reshape(height, width, 3))
    return image, ImageGrid.from_numpy(depth.reshape(height, width))
