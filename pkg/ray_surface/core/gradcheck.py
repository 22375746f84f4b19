"""Gradient checks of every differentiable operation against central differences."""
import logging
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd
import torch

from ray_surface.core.camera import (
    Intrinsics,
    RaySurface,
    ResidualSurface,
    compose_surface,
    pinhole_project,
    pinhole_template,
    pinhole_unproject,
    ray_unproject,
)
from ray_surface.core.fit import FitConfig, FitState, evaluate_state
from ray_surface.core.geometry import PoseParams, euler_to_pose, transform_points
from ray_surface.core.grid import (
    DTYPE,
    ImageGrid,
    bilinear_sample,
    downsample_half,
    grad_check,
    upsample_bilinear,
)
from ray_surface.core.losses import (
    LossWeights,
    photometric_loss,
    smoothness_loss,
    ssim_map,
    total_loss,
)
from ray_surface.core.projection import (
    PatchSpec,
    SimilarityPatch,
    project_cloud,
    similarity_patch,
    soft_project,
)

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3


class _WrongSquare(torch.autograd.Function):
    """x^2 whose backward is off by a factor of two."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * 4 * x


def wrong_gradient_error(eps: float = 1e-5) -> float:
    """Error grad_check reports for a deliberately doubled gradient (about 0.5)."""
    grid = ImageGrid.constant(1, 2, 0.25)
    return grad_check(lambda g: _WrongSquare.apply(g.data).sum(), grid, eps)


def _random_grid(rng, channels, height, width, low=0.0, high=1.0) -> ImageGrid:
    return ImageGrid(torch.from_numpy(rng.uniform(low, high, (channels, height, width))))


def _end_to_end_case(rng):
    height, width = 8, 10
    frames = [_random_grid(rng, 3, height, width, 0.2, 0.8) for _ in range(3)]
    template = pinhole_template(height, width, Intrinsics.default(height, width))
    state = FitState(
        inv_depth_params=torch.from_numpy(rng.uniform(-0.3, 0.3, (1, height, width))),
        residuals=torch.from_numpy(rng.normal(0.0, 0.05, (1, height, width, 3))),
        pose_params=torch.tensor(
            [[0.01, -0.005, 0.002, 0.003, -0.002, 0.001], [-0.01, 0.004, -0.003, -0.002, 0.003, 0.0]],
            dtype=DTYPE,
        ),
        template=template,
        targets=[1],
        pairs=[(1, 0), (1, 2)],
        d_min=0.5,
        d_max=5.0,
        lambda_r=0.5,
        tau=0.05,
    )
    config = FitConfig(patch=PatchSpec(3, 3), half_res_search=False, automask=False, d_min=0.5, d_max=5.0)
    return frames, state, config


def suite_cases(seed: int = 0) -> List[Tuple[str, Callable, object, float]]:
    """(name, op, input, tolerance) for every checked operation."""
    rng = np.random.default_rng(seed)
    cases = []

    grid = _random_grid(rng, 2, 4, 5)
    coords = torch.from_numpy(rng.integers(0, 3, (6, 2)) + rng.uniform(0.1, 0.9, (6, 2)))
    weights = torch.from_numpy(rng.normal(size=(6, 2)))
    cases.append(("bilinear_sample (values)", lambda g: (bilinear_sample(g, coords).values * weights).sum(), grid, OP_TOLERANCE))
    cases.append(("bilinear_sample (coords)", lambda c: (bilinear_sample(grid, c).values * weights).sum(), coords, OP_TOLERANCE))

    odd = _random_grid(rng, 1, 5, 5)
    probe = torch.from_numpy(rng.normal(size=(1, 3, 3)))
    cases.append(("downsample_half", lambda g: (downsample_half(g).data * probe).sum(), odd, OP_TOLERANCE))
    small = _random_grid(rng, 1, 3, 3)
    probe_up = torch.from_numpy(rng.normal(size=(1, 5, 7)))
    cases.append(("upsample_bilinear", lambda g: (upsample_bilinear(g, 5, 7).data * probe_up).sum(), small, OP_TOLERANCE))

    points = torch.from_numpy(rng.normal(size=(4, 3)))
    params = torch.from_numpy(rng.uniform(-1.0, 1.0, 6))
    cases.append((
        "euler_to_pose + transform_points",
        lambda p: (transform_points(euler_to_pose(PoseParams.from_vector(p)), points) ** 2).sum(),
        params,
        OP_TOLERANCE,
    ))

    K = Intrinsics(fx=30.0, fy=28.0, cx=16.0, cy=12.0)
    pixels = torch.from_numpy(rng.uniform(0, 32, (5, 2)))
    cases.append(("pinhole_unproject", lambda d: pinhole_unproject(K, pixels, d).sum(), torch.from_numpy(rng.uniform(1, 3, 5)), OP_TOLERANCE))
    cloud = torch.from_numpy(np.c_[rng.uniform(-1, 1, (5, 2)), rng.uniform(2, 4, 5)])
    cases.append(("pinhole_project", lambda P: pinhole_project(K, P)[0].sum(), cloud, OP_TOLERANCE))

    template = pinhole_template(4, 5, Intrinsics.default(4, 5))
    residual = torch.from_numpy(rng.normal(0.0, 0.3, (4, 5, 3)))
    probe_rays = torch.from_numpy(rng.normal(size=(4, 5, 3)))
    cases.append((
        "compose_surface",
        lambda r: (compose_surface(template, ResidualSurface(r, 0.7)).rays * probe_rays).sum(),
        residual,
        OP_TOLERANCE,
    ))
    depth = _random_grid(rng, 1, 4, 5, 1.0, 3.0)
    cases.append(("ray_unproject", lambda d: (ray_unproject(template, d) * probe_rays).sum(), depth, OP_TOLERANCE))

    surface = pinhole_template(9, 9, Intrinsics.default(9, 9))
    point = torch.tensor([0.1, -0.05, 1.0], dtype=DTYPE)
    patch = PatchSpec(3, 3)
    cases.append((
        "similarity_patch",
        lambda P: soft_project(similarity_patch(surface, P, (4, 4), patch), 0.05).sum(),
        point,
        OP_TOLERANCE,
    ))
    base = similarity_patch(surface, point, (4, 4), patch)
    scores = torch.from_numpy(rng.uniform(-1, 1, (3, 3)))
    cases.append((
        "soft_project",
        lambda s: soft_project(SimilarityPatch(base.anchor, s, base.coords, base.clamped), 0.5) @ torch.tensor([1.0, 2.0], dtype=DTYPE),
        scores,
        OP_TOLERANCE,
    ))
    field = ray_unproject(surface, ImageGrid.constant(9, 9, 2.0)) + torch.from_numpy(rng.normal(0.0, 0.01, (9, 9, 3)))
    cases.append((
        "project_cloud",
        lambda P: project_cloud(surface, P, patch=patch, tau=0.05).coords.sum(),
        field,
        OP_TOLERANCE,
    ))

    a, b = _random_grid(rng, 3, 5, 6), _random_grid(rng, 3, 5, 6)
    probe_ssim = torch.from_numpy(rng.normal(size=(3, 5, 6)))
    cases.append(("ssim_map", lambda g: (ssim_map(g, b).data * probe_ssim).sum(), a, OP_TOLERANCE))
    cases.append(("photometric_loss", lambda g: photometric_loss(a, g).data.sum(), b, OP_TOLERANCE))
    depth_s = _random_grid(rng, 1, 5, 6, 1.0, 4.0)
    cases.append(("smoothness_loss", lambda d: smoothness_loss(d, a), depth_s, OP_TOLERANCE))
    maps = [ImageGrid(torch.from_numpy(rng.uniform(0, 1, (1, 5, 6)))) for _ in range(2)]
    masks = [torch.from_numpy(rng.uniform(size=(5, 6)) > 0.2) for _ in range(2)]
    cases.append((
        "total_loss",
        lambda d: total_loss(maps, masks, d, a, LossWeights(lambda_d=0.1)),
        depth_s,
        OP_TOLERANCE,
    ))

    frames, state, config = _end_to_end_case(rng)

    def end_to_end(field_name):
        def op(tensor):
            values = {
                "inv_depth_params": state.inv_depth_params,
                "residuals": state.residuals,
                "pose_params": state.pose_params,
            }
            values[field_name] = tensor
            trial = FitState(
                template=state.template,
                targets=state.targets,
                pairs=state.pairs,
                d_min=state.d_min,
                d_max=state.d_max,
                lambda_r=state.lambda_r,
                tau=state.tau,
                **values,
            )
            return evaluate_state(frames, trial, config).loss

        return op

    for name in ("inv_depth_params", "pose_params", "residuals"):
        cases.append((f"end-to-end loss ({name})", end_to_end(name), getattr(state, name), END_TO_END_TOLERANCE))

    return cases


def run_suite(eps: float = 1e-5, seed: int = 0) -> pd.DataFrame:
    """Run every case and the wrong-gradient self-test; one row per check."""
    rows: List[Dict] = []
    for name, op, value, tolerance in suite_cases(seed):
        error = grad_check(op, value, eps)
        rows.append({"op": name, "error": error, "tolerance": tolerance, "passed": error < tolerance})
        logging.info(f"grad_check {name}: {error:.3e}")

    # the harness must flag a gradient that is off by a factor of two
    error = wrong_gradient_error(eps)
    rows.append({"op": "self-test (doubled gradient)", "error": error, "tolerance": 0.5, "passed": abs(error - 0.5) < 1e-3})
    return pd.DataFrame(rows)
