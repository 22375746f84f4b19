from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from ray_surface.core.camera import RaySurface, ray_unproject
from ray_surface.core.geometry import Pose, PoseParams, transform_points
from ray_surface.core.grid import DTYPE, ImageGrid, bilinear_sample
from ray_surface.core.projection import PatchSpec, Temperature, WarpGrid, project_cloud

# bilinear weight of in-mask neighbours needed to trust a context sample
CONTEXT_MASK_TOL = 1e-9


@dataclass(frozen=True)
class FramePair:
    target: ImageGrid
    context: ImageGrid
    pose_params: PoseParams  # target -> context

    def __post_init__(self):
        if self.target.shape != self.context.shape:
            raise ValueError(
                f"target {self.target.shape} and context {self.context.shape} differ"
            )


def warp_coords(
    depth: ImageGrid,
    surface_t: RaySurface,
    pose: Pose,
    surface_c: RaySurface,
    patch: PatchSpec,
    tau: Temperature,
    half_res: bool = False,
) -> WarpGrid:
    """Where every target pixel lands in the context image.

    Unprojects the target depth along `surface_t`, moves the points into the
    context frame with `pose` and projects them onto `surface_c`.
    """
    points = ray_unproject(surface_t, depth)
    moved = transform_points(pose, points)
    return project_cloud(surface_c, moved, patch=patch, tau=tau, half_res=half_res)


def synthesize(
    context: ImageGrid, warp: WarpGrid, context_mask: Optional[torch.Tensor] = None
) -> Tuple[ImageGrid, torch.Tensor]:
    """Sample `context` at the warped coordinates.

    `context_mask` optionally marks the context pixels that carry image
    content; samples blending any pixel outside it are invalid.
    """
    if (warp.height, warp.width) != (context.height, context.width):
        raise ValueError(
            f"warp {warp.height}x{warp.width} does not match context "
            f"{context.height}x{context.width}"
        )
    sample = bilinear_sample(context, warp.coords)
    mask = warp.valid & sample.valid
    if context_mask is not None:
        inside = ImageGrid(torch.as_tensor(context_mask, dtype=DTYPE)[None])
        weight = bilinear_sample(inside, warp.coords.detach()).values[..., 0]
        mask = mask & (weight >= 1 - CONTEXT_MASK_TOL)

    values = sample.values * mask.unsqueeze(-1).to(DTYPE)
    return ImageGrid(values.permute(2, 0, 1)), mask
