from dataclasses import dataclass
from typing import Optional, Tuple, Union

import torch
import torch.nn.functional as F

from ray_surface.core.camera import RaySurface, pixel_lattice
from ray_surface.core.grid import DTYPE, ImageGrid, downsample_half, in_bounds, upsample_bilinear

# directions shorter than this coincide with the camera center
MIN_DIRECTION_NORM = 1e-12
# an upsampled validity value must stay this close to 1 to keep the pixel
UPSAMPLED_VALID_TOL = 1e-9
# fraction of a pixel a match may lie past the image border and stay valid
EDGE_TOL = 1e-6

Temperature = Union[float, torch.Tensor]


@dataclass(frozen=True)
class PatchSpec:
    h: int = 41
    w: int = 41

    def __post_init__(self):
        for name, size in (("h", self.h), ("w", self.w)):
            if size < 1 or size % 2 == 0:
                raise ValueError(f"patch {name} must be odd and >= 1, got {size}")

    @property
    def radius(self) -> Tuple[int, int]:
        """Half sizes (rh, rw)."""
        return self.h // 2, self.w // 2

    def check(self, height: int, width: int) -> None:
        if self.h > height or self.w > width:
            raise ValueError(
                f"patch {self.h}x{self.w} exceeds the {height}x{width} image"
            )

    def offsets(self) -> torch.Tensor:
        """(h * w, 2) cell offsets (du, dv) in row-major order."""
        rh, rw = self.radius
        dv, du = torch.meshgrid(
            torch.arange(-rh, rh + 1), torch.arange(-rw, rw + 1), indexing="ij"
        )
        return torch.stack([du.reshape(-1), dv.reshape(-1)], dim=-1)


@dataclass(frozen=True)
class SimilarityPatch:
    """Cosine scores of one 3D point against the rays of an h x w window.

    Cells falling outside the image are flagged in `clamped` and carry a
    score of -inf.
    """

    anchor: Tuple[int, int]  # (u, v)
    scores: torch.Tensor  # (h, w)
    coords: torch.Tensor  # (h, w, 2) pixel (u, v) of every cell
    clamped: torch.Tensor  # (h, w) bool


@dataclass(frozen=True)
class WarpGrid:
    coords: torch.Tensor  # (H, W, 2) continuous (u, v)
    valid: torch.Tensor  # (H, W) bool

    def __post_init__(self):
        if self.coords.shape[:-1] != self.valid.shape or self.coords.shape[-1] != 2:
            raise ValueError(
                f"WarpGrid coords {tuple(self.coords.shape)} and valid "
                f"{tuple(self.valid.shape)} disagree"
            )

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @classmethod
    def identity(cls, height: int, width: int) -> "WarpGrid":
        return cls(pixel_lattice(height, width), torch.ones(height, width, dtype=torch.bool))

    def valid_fraction(self) -> float:
        return float(self.valid.to(DTYPE).mean())


def _directions(points: torch.Tensor, center: torch.Tensor):
    offset = points - center
    norm = offset.norm(dim=-1)
    return F.normalize(offset, dim=-1, eps=MIN_DIRECTION_NORM), norm > MIN_DIRECTION_NORM


def _patch_cells(height: int, width: int, anchors: torch.Tensor, patch: PatchSpec):
    """Cell coordinates, clamp flags and flat gather indices for N anchors."""
    cells = anchors[:, None, :] + patch.offsets()[None]  # (N, K, 2)
    u, v = cells[..., 0], cells[..., 1]
    clamped = (u < 0) | (u >= width) | (v < 0) | (v >= height)
    flat_index = v.clamp(0, height - 1) * width + u.clamp(0, width - 1)
    return cells, clamped, flat_index


def _patch_scores(rays, directions, flat_index, clamped):
    gathered = rays.reshape(-1, 3)[flat_index]  # (N, K, 3)
    scores = torch.einsum("nkc,nc->nk", gathered, directions)
    return scores.masked_fill(clamped, float("-inf"))


def similarity_patch(
    surface_c: RaySurface, P, anchor: Tuple[int, int], patch: PatchSpec
) -> SimilarityPatch:
    P = torch.as_tensor(P, dtype=DTYPE)
    direction, usable = _directions(P, surface_c.center)
    if not bool(usable):
        raise ValueError("point coincides with the camera center")

    anchors = torch.tensor([anchor], dtype=torch.long)
    cells, clamped, flat_index = _patch_cells(
        surface_c.height, surface_c.width, anchors, patch
    )
    scores = _patch_scores(surface_c.rays, direction[None], flat_index, clamped)
    shape = (patch.h, patch.w)
    return SimilarityPatch(
        anchor=(int(anchor[0]), int(anchor[1])),
        scores=scores.reshape(shape),
        coords=cells.reshape(*shape, 2).to(DTYPE),
        clamped=clamped.reshape(shape),
    )


def soft_project(patch_scores: SimilarityPatch, tau: Temperature) -> torch.Tensor:
    """Soft-argmax of the patch: softmax(scores / tau)-weighted cell coordinates."""
    if float(tau) <= 0:
        raise ValueError(f"temperature must be positive, got {float(tau)}")
    if bool(patch_scores.clamped.all()):
        raise ValueError("every cell of the patch is clamped")

    scores = patch_scores.scores.masked_fill(patch_scores.clamped, float("-inf"))
    weights = torch.softmax(scores.reshape(-1) / tau, dim=0)
    return weights @ patch_scores.coords.reshape(-1, 2)


def hard_project(surface_c: RaySurface, P) -> torch.Tensor:
    """Exhaustive argmax over the whole image; returns (..., 2) integer (u, v).

    Ties resolve to the smallest row-major pixel index. The winner is the
    angularly closest ray, so on a pinhole surface it agrees with the rounded
    pinhole projection except within a few hundredths of a pixel of a
    half-pixel boundary, where the two orders can differ. Not differentiable.
    """
    P = torch.as_tensor(P, dtype=DTYPE)
    direction, usable = _directions(P, surface_c.center)
    if not bool(usable.all()):
        raise ValueError("point coincides with the camera center")

    with torch.no_grad():
        scores = direction.reshape(-1, 3) @ surface_c.rays.reshape(-1, 3).T
        index = scores.argmax(dim=-1)
    width = surface_c.width
    pixels = torch.stack([index % width, index // width], dim=-1)
    return pixels.reshape(*P.shape[:-1], 2)


def _beyond_image(surface_c: RaySurface, directions, best_cells, radius) -> torch.Tensor:
    """Flag points whose best cell is on the image border but which lie past it.

    The offset beyond the border cell is measured along the ray step to the
    inward neighbor, in pixels.
    """
    height, width = surface_c.height, surface_c.width
    rays = surface_c.rays.detach().reshape(-1, 3)
    border_ray = rays[best_cells[:, 1] * width + best_cells[:, 0]]
    outside = torch.zeros(len(best_cells), dtype=torch.bool)

    for axis, size, r in ((0, width, radius[0]), (1, height, radius[1])):
        if r == 0 or size < 2:
            continue
        position = best_cells[:, axis]
        at_edge = (position == 0) | (position == size - 1)
        if not bool(at_edge.any()):
            continue
        inward = best_cells.clone()
        inward[:, axis] = torch.where(
            position == 0, torch.ones_like(position), torch.full_like(position, size - 2)
        )
        step = border_ray - rays[inward[:, 1] * width + inward[:, 0]]
        beyond = ((directions - border_ray) * step).sum(dim=-1)
        beyond = beyond / (step * step).sum(dim=-1).clamp_min(1e-300)
        outside |= at_edge & (beyond > EDGE_TOL)
    return outside


def _project_flat(
    surface_c: RaySurface,
    points: torch.Tensor,
    anchors: torch.Tensor,
    patch: PatchSpec,
    tau: Temperature,
):
    height, width = surface_c.height, surface_c.width
    directions, usable = _directions(points.reshape(-1, 3), surface_c.center)
    anchors = anchors.reshape(-1, 2)

    cells, clamped, flat_index = _patch_cells(height, width, anchors, patch)
    scores = _patch_scores(surface_c.rays, directions, flat_index, clamped)
    weights = torch.softmax(scores / tau, dim=-1)
    coords = torch.einsum("nk,nkc->nc", weights, cells.to(DTYPE))

    # maximum on the patch border means the true match may lie outside it
    rh, rw = patch.radius
    best = patch.offsets()[scores.detach().argmax(dim=-1)]
    saturated = torch.zeros_like(usable)
    if rw > 0:
        saturated |= best[:, 0].abs() == rw
    if rh > 0:
        saturated |= best[:, 1].abs() == rh

    outside = _beyond_image(surface_c, directions.detach(), anchors + best, (rw, rh))
    valid = usable & ~saturated & ~outside & in_bounds(coords.detach(), height, width)
    return coords, valid


def project_cloud(
    surface_c: RaySurface,
    points: torch.Tensor,
    anchors: Optional[torch.Tensor] = None,
    patch: PatchSpec = PatchSpec(),
    tau: Temperature = 0.01,
    half_res: bool = False,
) -> WarpGrid:
    """Project an (H, W, 3) point field onto `surface_c` by patch soft-argmax.

    Each point is matched against the rays in a window centered on its
    anchor, by default the pixel the point was unprojected from. With
    `half_res`, matching runs on the block-averaged surface and point field
    and the resulting displacements are upsampled back to full resolution.
    """
    if float(tau) <= 0:
        raise ValueError(f"temperature must be positive, got {float(tau)}")
    height, width = points.shape[:2]
    if (height, width) != (surface_c.height, surface_c.width):
        raise ValueError(
            f"point field {height}x{width} does not match surface "
            f"{surface_c.height}x{surface_c.width}"
        )
    patch.check(height, width)
    if anchors is None:
        anchors = pixel_lattice(height, width).long()
    anchors = torch.as_tensor(anchors).long()

    if not half_res:
        coords, valid = _project_flat(surface_c, points, anchors, patch, tau)
        return WarpGrid(coords.reshape(height, width, 2), valid.reshape(height, width))

    half_surface = surface_c.half_resolution()
    half_points = downsample_half(ImageGrid(points.permute(2, 0, 1))).data.permute(1, 2, 0)
    half_anchors = downsample_half(ImageGrid(anchors.permute(2, 0, 1).to(DTYPE))).data
    half_anchors = torch.round((half_anchors.permute(1, 2, 0) - 0.5) / 2).long()

    coords_h, valid_h = _project_flat(half_surface, half_points, half_anchors, patch, tau)
    hh, wh = half_surface.height, half_surface.width
    displacement = 2 * (coords_h - half_anchors.reshape(-1, 2).to(DTYPE))
    displacement = displacement.reshape(hh, wh, 2).permute(2, 0, 1)
    displacement = upsample_bilinear(ImageGrid(displacement), height, width).data
    coords = anchors.to(DTYPE) + displacement.permute(1, 2, 0)

    kept = valid_h.to(DTYPE).reshape(1, hh, wh)
    kept = upsample_bilinear(ImageGrid(kept), height, width).data[0]
    valid = (kept >= 1 - UPSAMPLED_VALID_TOL) & in_bounds(coords.detach(), height, width)
    return WarpGrid(coords, valid)


def surface_angular_error(
    a: RaySurface, b: RaySurface, mask: Optional[torch.Tensor] = None
) -> float:
    """Mean angle in radians between corresponding rays of two surfaces."""
    if a.rays.shape != b.rays.shape:
        raise ValueError("surfaces differ in size")
    cosine = (a.rays.detach() * b.rays.detach()).sum(dim=-1).clamp(-1.0, 1.0)
    angles = torch.acos(cosine)
    if mask is not None:
        mask = torch.as_tensor(mask, dtype=torch.bool)
        if not bool(mask.any()):
            raise ValueError("angular error mask selects no pixel")
        angles = angles[mask]
    return float(angles.mean())
