import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from ray_surface.core.camera import RaySurface
from ray_surface.core.geometry import Pose
from ray_surface.core.grid import ImageGrid

REPORT_VERSION = 1
# surface components with a smaller mean magnitude are left out of the CoV
COV_MIN_MEAN = 1e-6

DepthMap = Union[ImageGrid, np.ndarray, torch.Tensor]
Trajectory = Union[Sequence[Pose], np.ndarray]


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _depth_array(depth: DepthMap) -> np.ndarray:
    if isinstance(depth, ImageGrid):
        return depth.numpy()[..., 0]
    if isinstance(depth, torch.Tensor):
        depth = depth.detach().cpu().numpy()
    return np.asarray(depth, dtype=np.float64).squeeze()


def depth_metrics(
    pred: DepthMap, gt: DepthMap, max_depth: float = 80.0, min_depth: float = 1e-3
) -> DepthMetrics:
    """Standard depth errors after median scaling; gt <= 0 marks invalid pixels."""
    pred, gt = _depth_array(pred), _depth_array(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")

    valid = np.isfinite(gt) & (gt > 0) & (gt <= max_depth) & np.isfinite(pred) & (pred > 0)
    if not valid.any():
        raise ValueError(f"no valid ground-truth pixel in (0, {max_depth}]")
    pred, gt = pred[valid], gt[valid]

    pred = np.clip(pred * np.median(gt) / np.median(pred), min_depth, max_depth)

    ratio = np.maximum(pred / gt, gt / pred)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(pred - gt) / gt)),
        sq_rel=float(np.mean((pred - gt) ** 2 / gt)),
        rmse=float(np.sqrt(np.mean((pred - gt) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(pred) - np.log(gt)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
    )


def positions(poses: Trajectory) -> np.ndarray:
    """(N, 3) camera centers of camera-to-world poses."""
    if isinstance(poses, np.ndarray):
        array = poses
        if array.ndim == 3:
            array = array[:, :3, 3]
        return np.asarray(array, dtype=np.float64)
    return np.stack([pose.translation.detach().cpu().numpy() for pose in poses])


def align_similarity(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Scale, rotation and translation minimizing |s R pred + t - gt|^2 (Umeyama)."""
    mu_pred, mu_gt = pred.mean(axis=0), gt.mean(axis=0)
    centered_pred, centered_gt = pred - mu_pred, gt - mu_gt
    if np.allclose(centered_gt, 0.0):
        raise ValueError("degenerate ground-truth trajectory: all positions coincide")

    cov = centered_gt.T @ centered_pred / len(pred)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1
    rotation = U @ S @ Vt

    var_pred = np.mean(np.sum(centered_pred ** 2, axis=1))
    scale = np.trace(np.diag(D) @ S) / var_pred if var_pred > 0 else 0.0
    translation = mu_gt - scale * rotation @ mu_pred
    return scale, rotation, translation


def ate_full(pred: Trajectory, gt: Trajectory) -> float:
    """RMSE of camera positions after similarity alignment of `pred` onto `gt`."""
    pred, gt = positions(pred), positions(gt)
    if len(pred) != len(gt) or len(gt) < 2:
        raise ValueError(f"need two equally long trajectories of >= 2 poses, got {len(pred)} and {len(gt)}")

    scale, rotation, translation = align_similarity(pred, gt)
    aligned = scale * pred @ rotation.T + translation
    return float(np.sqrt(np.mean(np.sum((aligned - gt) ** 2, axis=1))))


def ate_snippet_table(pred: Trajectory, gt: Trajectory, snippet: int = 5) -> pd.DataFrame:
    """ATE of every sliding window of `snippet` poses, each aligned on its own."""
    pred, gt = positions(pred), positions(gt)
    if len(pred) != len(gt):
        raise ValueError(f"trajectories differ in length: {len(pred)} vs {len(gt)}")
    if snippet < 2 or len(gt) < snippet:
        raise ValueError(f"trajectory of {len(gt)} poses too short for {snippet}-pose snippets")

    starts = range(len(gt) - snippet + 1)
    errors = [ate_full(pred[s:s + snippet], gt[s:s + snippet]) for s in starts]
    table = pd.DataFrame({"start": list(starts), "ate": errors})
    return table.set_index("start")


def ate_snippets(pred: Trajectory, gt: Trajectory, snippet: int = 5) -> Tuple[float, float]:
    """Mean and (population) standard deviation of the per-window ATE."""
    errors = ate_snippet_table(pred, gt, snippet)["ate"].to_numpy()
    return float(errors.mean()), float(errors.std())


def surface_cov(surfaces: Sequence[Union[RaySurface, np.ndarray]]) -> float:
    """Mean over pixels and components of std / |mean| across the surfaces."""
    if len(surfaces) < 2:
        raise ValueError(f"surface_cov needs at least 2 surfaces, got {len(surfaces)}")
    arrays = [
        s.rays.detach().cpu().numpy() if isinstance(s, RaySurface) else np.asarray(s, dtype=np.float64)
        for s in surfaces
    ]
    if len({a.shape for a in arrays}) != 1:
        raise ValueError("surfaces differ in size")

    stack = np.stack(arrays)
    mean, std = stack.mean(axis=0), stack.std(axis=0)
    included = np.abs(mean) >= COV_MIN_MEAN
    if not included.any():
        return 0.0
    return float(np.mean(std[included] / np.abs(mean[included])))


def write_report(metrics: Dict[str, float], directory: str, kind: str) -> Tuple[str, str]:
    """Write `metrics.txt` (key = value lines) and `metrics.json`.

    The JSON schema is {"version": 1, "kind": <kind>, "metrics": {name: value}}.
    """
    os.makedirs(directory, exist_ok=True)
    text_path = os.path.join(directory, "metrics.txt")
    json_path = os.path.join(directory, "metrics.json")

    with open(text_path, "w", encoding="utf-8") as f:
        f.write(f"kind = {kind}\n")
        for name, value in metrics.items():
            f.write(f"{name} = {float(value):.6g}\n")
    with open(json_path, "w", encoding="utf-8") as f:
        payload = {"version": REPORT_VERSION, "kind": kind, "metrics": {k: float(v) for k, v in metrics.items()}}
        json.dump(payload, f, indent=2)

    logging.info(f"Wrote {kind} report to {directory}")
    return text_path, json_path
