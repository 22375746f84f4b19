from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64


@dataclass(frozen=True)
class ImageGrid:
    """Dense H x W x C raster stored planar, i.e. as a (C, H, W) tensor.

    The planar layout is the only in-memory order used by the package;
    conversions to interleaved (H, W, C) arrays happen in `from_numpy`
    and `numpy` only.
    """

    data: torch.Tensor

    def __post_init__(self):
        if self.data.dim() != 3:
            raise ValueError(f"ImageGrid expects (C, H, W) data, got {self.data.shape}")
        if self.data.numel() == 0:
            raise ValueError("ImageGrid must not be empty")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.height, self.width, self.channels

    @classmethod
    def from_numpy(cls, array: np.ndarray) -> "ImageGrid":
        """Build from an (H, W) or (H, W, C) array."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 2:
            array = array[..., None]
        return cls(torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1))))

    @classmethod
    def constant(cls, height: int, width: int, value: float, channels: int = 1):
        return cls(torch.full((channels, height, width), float(value), dtype=DTYPE))

    def numpy(self) -> np.ndarray:
        """Interleaved (H, W, C) copy, detached from any autograd graph."""
        return self.data.detach().cpu().numpy().transpose(1, 2, 0).copy()

    def with_data(self, data: torch.Tensor) -> "ImageGrid":
        return ImageGrid(data)


@dataclass(frozen=True)
class SampleResult:
    values: torch.Tensor  # (..., C)
    valid: torch.Tensor  # (...,) bool


def in_bounds(coords: torch.Tensor, height: int, width: int) -> torch.Tensor:
    u, v = coords[..., 0], coords[..., 1]
    return (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)


def bilinear_sample(grid: ImageGrid, coords: torch.Tensor) -> SampleResult:
    """Sample `grid` at continuous (u, v) pixel coordinates of shape (..., 2).

    Pixel centers sit on the integer lattice. Queries outside
    [0, W-1] x [0, H-1] are invalid and carry zeros; no clamping.
    """
    coords = torch.as_tensor(coords, dtype=DTYPE)
    if not torch.isfinite(coords).all():
        raise ValueError("bilinear_sample requires finite coordinates")

    data = grid.data
    height, width = grid.height, grid.width
    valid = in_bounds(coords, height, width)

    u, v = coords[..., 0], coords[..., 1]
    # left/top neighbour; clamped so that u = W - 1 blends to the last column
    u0 = torch.floor(u).clamp(0, max(width - 2, 0))
    v0 = torch.floor(v).clamp(0, max(height - 2, 0))
    du = (u - u0).unsqueeze(-1)
    dv = (v - v0).unsqueeze(-1)

    u0, v0 = u0.long(), v0.long()
    u1 = (u0 + 1).clamp(max=width - 1)
    v1 = (v0 + 1).clamp(max=height - 1)

    flat = data.reshape(grid.channels, -1).t()  # (H*W, C)

    def gather(vv, uu):
        return flat[(vv * width + uu).reshape(-1)].reshape(*vv.shape, grid.channels)

    values = (
        gather(v0, u0) * (1 - du) * (1 - dv)
        + gather(v0, u1) * du * (1 - dv)
        + gather(v1, u0) * (1 - du) * dv
        + gather(v1, u1) * du * dv
    )
    values = values * valid.unsqueeze(-1).to(values.dtype)
    return SampleResult(values=values, valid=valid)


def downsample_half(grid: ImageGrid) -> ImageGrid:
    """Average 2x2 blocks; odd trailing rows/columns form truncated blocks."""
    if grid.height < 2 or grid.width < 2:
        raise ValueError(
            f"downsample_half needs at least 2x2 pixels, got {grid.height}x{grid.width}"
        )
    data = grid.data.unsqueeze(0)
    ones = torch.ones_like(data[:, :1])
    # ratio of pooled sums gives the mean over the pixels actually present
    summed = F.avg_pool2d(data, 2, stride=2, ceil_mode=True)
    count = F.avg_pool2d(ones, 2, stride=2, ceil_mode=True)
    return ImageGrid((summed / count).squeeze(0))


def upsample_bilinear(grid: ImageGrid, height: int, width: int) -> ImageGrid:
    """Align-corners bilinear upsampling: output corners equal input corners."""
    if height < grid.height or width < grid.width:
        raise ValueError(
            f"upsample_bilinear cannot shrink {grid.height}x{grid.width} "
            f"to {height}x{width}"
        )
    out = F.interpolate(
        grid.data.unsqueeze(0),
        size=(height, width),
        mode="bilinear",
        align_corners=True,
    )
    return ImageGrid(out.squeeze(0))


def pairwise_sum(values: torch.Tensor) -> torch.Tensor:
    """Sum a flat tensor by recursive halving to bound rounding drift."""
    values = values.reshape(-1)
    if values.numel() == 0:
        return values.new_zeros(())
    while values.numel() > 1:
        if values.numel() % 2:
            values = torch.cat([values, values.new_zeros(1)])
        values = values[0::2] + values[1::2]
    return values[0]


def masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of `values` over `mask` using pairwise summation."""
    mask = mask.to(values.dtype).expand_as(values)
    return pairwise_sum(values * mask) / pairwise_sum(mask)


Params = Union[ImageGrid, torch.Tensor]


def grad_check(op: Callable[[Params], torch.Tensor], grid: Params, eps: float) -> float:
    """Max relative error between autograd and central-difference gradients.

    `op` maps `grid` (an ImageGrid or a plain tensor, passed back in the same
    kind) to a scalar. The error per parameter is
    |analytic - numeric| / max(1, |numeric|).
    """
    if eps <= 0:
        raise ValueError(f"grad_check requires eps > 0, got {eps}")

    is_grid = isinstance(grid, ImageGrid)
    base = (grid.data if is_grid else torch.as_tensor(grid, dtype=DTYPE)).detach()
    base = base.to(DTYPE).clone()

    def call(tensor):
        out = op(ImageGrid(tensor) if is_grid else tensor)
        out = torch.as_tensor(out)
        if out.numel() != 1:
            raise ValueError("grad_check expects a scalar-valued op")
        if not torch.isfinite(out).all():
            raise ValueError("grad_check: op produced a non-finite value")
        return out.reshape(())

    params = base.clone().requires_grad_(True)
    (analytic,) = torch.autograd.grad(call(params), params, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(base)

    numeric = torch.zeros_like(base)
    flat = numeric.view(-1)
    with torch.no_grad():
        for idx in range(base.numel()):
            plus, minus = base.clone(), base.clone()
            plus.view(-1)[idx] += eps
            minus.view(-1)[idx] -= eps
            flat[idx] = (call(plus) - call(minus)) / (2 * eps)

    error = (analytic - numeric).abs() / numeric.abs().clamp(min=1.0)
    return float(error.max())
