from dataclasses import dataclass, field
from typing import Tuple, Union

import torch

from ray_surface.core.grid import DTYPE, ImageGrid, downsample_half

UNIT_NORM_TOL = 1e-6
# squared norm below which a composed ray counts as degenerate
DEGENERATE_NORM = 1e-12


class DegenerateSurfaceError(ValueError):
    def __init__(self, row: int, col: int):
        super().__init__(f"ray surface collapses to a zero vector at pixel ({row}, {col})")
        self.pixel = (row, col)


class NonPositiveDepthError(ValueError):
    def __init__(self, count: int, row: int, col: int):
        super().__init__(
            f"{count} non-positive depth value(s), first at pixel ({row}, {col})"
        )
        self.count = count
        self.pixel = (row, col)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def default(cls, height: int, width: int) -> "Intrinsics":
        """Dummy calibration fx = cx = W / 2, fy = cy = H / 2."""
        return cls(fx=width / 2, fy=height / 2, cx=width / 2, cy=height / 2)

    def matrix(self) -> torch.Tensor:
        return torch.tensor(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=DTYPE,
        )


@dataclass(frozen=True)
class RaySurface:
    """Central generic camera: one unit ray per pixel, shared center S = 0."""

    rays: torch.Tensor  # (H, W, 3)
    center: torch.Tensor = field(default_factory=lambda: torch.zeros(3, dtype=DTYPE))

    def __post_init__(self):
        if self.rays.dim() != 3 or self.rays.shape[-1] != 3:
            raise ValueError(f"RaySurface expects (H, W, 3) rays, got {self.rays.shape}")
        norms = self.rays.detach().norm(dim=-1)
        if not torch.allclose(norms, torch.ones_like(norms), atol=UNIT_NORM_TOL, rtol=0):
            worst = float((norms - 1).abs().max())
            raise ValueError(f"RaySurface rays must have unit norm (max deviation {worst:.3g})")
        if bool(self.center.detach().abs().gt(0).any()):
            raise ValueError("only central cameras with S = (0, 0, 0) are supported")

    @property
    def height(self) -> int:
        return self.rays.shape[0]

    @property
    def width(self) -> int:
        return self.rays.shape[1]

    @classmethod
    def from_directions(cls, directions: torch.Tensor) -> "RaySurface":
        """Normalize arbitrary non-zero directions into a surface."""
        directions = torch.as_tensor(directions, dtype=DTYPE)
        return cls(directions / directions.norm(dim=-1, keepdim=True))

    def grid(self) -> ImageGrid:
        return ImageGrid(self.rays.permute(2, 0, 1))

    def half_resolution(self) -> "RaySurface":
        """Block-averaged and renormalized surface at half resolution."""
        rays = downsample_half(self.grid()).data.permute(1, 2, 0)
        return RaySurface.from_directions(rays)


@dataclass(frozen=True)
class ResidualSurface:
    residuals: torch.Tensor  # (H, W, 3), unconstrained
    weight: Union[float, torch.Tensor] = 0.0

    def __post_init__(self):
        if self.residuals.dim() != 3 or self.residuals.shape[-1] != 3:
            raise ValueError(
                f"ResidualSurface expects (H, W, 3) residuals, got {self.residuals.shape}"
            )
        if not torch.isfinite(self.residuals.detach()).all():
            raise ValueError("residual surface contains non-finite values")
        weight = float(self.weight)
        if not 0.0 <= weight <= 1.0:
            raise ValueError(f"lambda_r must lie in [0, 1], got {weight}")

    @classmethod
    def zeros(cls, height: int, width: int, weight: float = 0.0) -> "ResidualSurface":
        return cls(torch.zeros(height, width, 3, dtype=DTYPE), weight)


def _as_pixels(p) -> torch.Tensor:
    return torch.as_tensor(p, dtype=DTYPE)


def pinhole_unproject(K: Intrinsics, p, d) -> torch.Tensor:
    """d * K^-1 (u, v, 1); broadcasts over leading dimensions."""
    p, d = _as_pixels(p), torch.as_tensor(d, dtype=DTYPE)
    if bool((d <= 0).any()):
        raise ValueError("pinhole_unproject requires positive depth")
    x = (p[..., 0] - K.cx) / K.fx
    y = (p[..., 1] - K.cy) / K.fy
    return torch.stack([x * d, y * d, torch.ones_like(x) * d], dim=-1)


def pinhole_project(K: Intrinsics, P) -> Tuple[torch.Tensor, torch.Tensor]:
    """Project points (..., 3); returns ((..., 2) pixels, in-front mask).

    Points with z <= 0 are reported through the mask; their coordinates are
    computed with a unit depth placeholder and carry no meaning.
    """
    P = torch.as_tensor(P, dtype=DTYPE)
    z = P[..., 2]
    in_front = z > 0
    safe_z = torch.where(in_front, z, torch.ones_like(z))
    u = K.fx * P[..., 0] / safe_z + K.cx
    v = K.fy * P[..., 1] / safe_z + K.cy
    return torch.stack([u, v], dim=-1), in_front


def pixel_lattice(height: int, width: int) -> torch.Tensor:
    """(H, W, 2) integer pixel centers as (u, v)."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=DTYPE), torch.arange(width, dtype=DTYPE), indexing="ij"
    )
    return torch.stack([u, v], dim=-1)


def pinhole_template(
    height: int, width: int, K: Intrinsics, plane_depth: float = 1.0
) -> RaySurface:
    if plane_depth <= 0:
        raise ValueError(f"plane_depth must be positive, got {plane_depth}")
    points = pinhole_unproject(K, pixel_lattice(height, width), plane_depth)
    return RaySurface.from_directions(points)


def compose_surface(template: RaySurface, residual: ResidualSurface) -> RaySurface:
    """normalize(Q0 + lambda_r * Q_r), pixel by pixel."""
    if template.rays.shape != residual.residuals.shape:
        raise ValueError(
            f"template {tuple(template.rays.shape)} and residual "
            f"{tuple(residual.residuals.shape)} differ in size"
        )
    summed = template.rays + residual.weight * residual.residuals
    sq_norm = (summed * summed).sum(dim=-1, keepdim=True)
    bad = sq_norm.detach().squeeze(-1) < DEGENERATE_NORM
    if bool(bad.any()):
        row, col = (int(i) for i in bad.nonzero()[0])
        raise DegenerateSurfaceError(row, col)
    return RaySurface(summed / sq_norm.sqrt())


def ray_unproject(surface: RaySurface, depth: ImageGrid) -> torch.Tensor:
    """P(u, v) = S + D(u, v) Q(u, v) for a single-channel depth grid."""
    if depth.channels != 1 or (depth.height, depth.width) != (surface.height, surface.width):
        raise ValueError(
            f"depth {depth.shape} does not match surface "
            f"{surface.height}x{surface.width}"
        )
    values = depth.data[0]
    bad = values.detach() <= 0
    if bool(bad.any()):
        row, col = (int(i) for i in bad.nonzero()[0])
        raise NonPositiveDepthError(int(bad.sum()), row, col)
    return surface.center + values.unsqueeze(-1) * surface.rays
