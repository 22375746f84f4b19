from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from ray_surface.core.grid import DTYPE, ImageGrid, masked_mean

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class ZeroValidPixelsError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.85
    lambda_d: float = 0.001

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lambda_d < 0:
            raise ValueError(f"lambda_d must be >= 0, got {self.lambda_d}")


def _check_same(a: ImageGrid, b: ImageGrid) -> None:
    if a.shape != b.shape:
        raise ValueError(f"images differ in shape: {a.shape} vs {b.shape}")


def ssim_map(a: ImageGrid, b: ImageGrid) -> ImageGrid:
    """Per-pixel, per-channel SSIM over reflection-padded 3x3 windows."""
    _check_same(a, b)
    x = F.pad(a.data.unsqueeze(0), (1, 1, 1, 1), mode="reflect")
    y = F.pad(b.data.unsqueeze(0), (1, 1, 1, 1), mode="reflect")

    mu_x = F.avg_pool2d(x, 3, 1)
    mu_y = F.avg_pool2d(y, 3, 1)
    sigma_x = F.avg_pool2d(x * x, 3, 1) - mu_x * mu_x
    sigma_y = F.avg_pool2d(y * y, 3, 1) - mu_y * mu_y
    sigma_xy = F.avg_pool2d(x * y, 3, 1) - mu_x * mu_y

    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)
    denominator = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return ImageGrid((numerator / denominator).clamp(-1.0, 1.0).squeeze(0))


def photometric_blend(ssim, l1, alpha: float):
    return alpha * (1 - ssim) / 2 + (1 - alpha) * l1


def photometric_loss(
    target: ImageGrid,
    synth: ImageGrid,
    mask: Optional[torch.Tensor] = None,
    weights: LossWeights = LossWeights(),
) -> ImageGrid:
    """Single-channel SSIM + L1 appearance loss, averaged over color channels.

    Pixels outside `mask` are set to 0; reductions must still exclude them.
    """
    _check_same(target, synth)
    ssim = ssim_map(target, synth).data
    l1 = (target.data - synth.data).abs()
    loss = photometric_blend(ssim, l1, weights.alpha).mean(dim=0, keepdim=True)
    if mask is not None:
        loss = torch.where(mask.unsqueeze(0), loss, torch.zeros_like(loss))
    return ImageGrid(loss)


def erode_mask(mask: torch.Tensor) -> torch.Tensor:
    """Shrink an (H, W) mask so every kept pixel has a fully valid 3x3 neighborhood.

    Pixels beyond the image border count as valid, matching the reflection
    padding of `ssim_map`.
    """
    holes = (~torch.as_tensor(mask, dtype=torch.bool)).to(DTYPE)[None, None]
    return F.max_pool2d(holes, 3, stride=1, padding=1)[0, 0] == 0


def min_over_context(
    losses: Sequence[ImageGrid], masks: Sequence[torch.Tensor]
) -> Tuple[ImageGrid, torch.Tensor]:
    """Pixel-wise minimum over the contexts in which the pixel is valid.

    Returns the reduced map and its mask; a pixel is invalid only if it is
    invalid in every context, and then carries 0.
    """
    if len(losses) == 0:
        raise ValueError("min_over_context needs at least one loss map")
    if len(losses) != len(masks):
        raise ValueError(f"{len(losses)} loss maps but {len(masks)} masks")

    stacked = torch.stack([loss.data[0] for loss in losses])
    valid = torch.stack([torch.as_tensor(mask, dtype=torch.bool) for mask in masks])
    inf = torch.full_like(stacked, float("inf"))
    reduced = torch.where(valid, stacked, inf).min(dim=0).values
    any_valid = valid.any(dim=0)
    reduced = torch.where(any_valid, reduced, torch.zeros_like(reduced))
    return ImageGrid(reduced.unsqueeze(0)), any_valid


def auto_mask(warped_loss: ImageGrid, unwarped_loss: ImageGrid) -> torch.Tensor:
    """Keep pixels whose warped loss is strictly below the unwarped loss."""
    _check_same(warped_loss, unwarped_loss)
    return warped_loss.data[0] < unwarped_loss.data[0]


def smoothness_loss(depth: ImageGrid, image: ImageGrid) -> torch.Tensor:
    """Edge-aware smoothness of mean-normalized inverse depth."""
    if (depth.height, depth.width) != (image.height, image.width):
        raise ValueError(
            f"depth {depth.height}x{depth.width} and image "
            f"{image.height}x{image.width} differ in size"
        )
    inv = 1.0 / depth.data[0]
    norm = inv / inv.mean()

    grad_x = (norm[:, 1:] - norm[:, :-1]).abs()
    grad_y = (norm[1:, :] - norm[:-1, :]).abs()
    image_x = (image.data[:, :, 1:] - image.data[:, :, :-1]).abs().mean(dim=0)
    image_y = (image.data[:, 1:, :] - image.data[:, :-1, :]).abs().mean(dim=0)

    loss = inv.new_zeros(())
    if grad_x.numel():
        loss = loss + (grad_x * torch.exp(-image_x)).mean()
    if grad_y.numel():
        loss = loss + (grad_y * torch.exp(-image_y)).mean()
    return loss


def total_loss(
    pair_losses: Sequence[ImageGrid],
    masks: Sequence[torch.Tensor],
    depth: ImageGrid,
    image: ImageGrid,
    weights: LossWeights = LossWeights(),
    keep: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Masked mean of the min-over-context photometric map plus weighted smoothness.

    `keep` is an optional extra pixel mask, typically from `auto_mask`.
    """
    reduced, valid = min_over_context(pair_losses, masks)
    if keep is not None:
        valid = valid & keep
    if not bool(valid.any()):
        raise ZeroValidPixelsError("no valid pixel left to average the photometric loss")

    photometric = masked_mean(reduced.data[0], valid.to(DTYPE))
    return photometric + weights.lambda_d * smoothness_loss(depth, image)
