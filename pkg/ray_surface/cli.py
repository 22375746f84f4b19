"""Command-line entry point: `ray-surface <command> ...`.

Failures exit with status 1 and print one line to stderr:
`error: <ErrorClass>: <message>`. Usage errors exit with status 2.
"""
import argparse
import dataclasses
import glob
import logging
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from matplotlib import image as mpimg

from ray_surface.core.camera import RaySurface
from ray_surface.core.fit import FitConfig, export_state, fit_scene
from ray_surface.core.geometry import Pose
from ray_surface.core.gradcheck import run_suite
from ray_surface.core.grid import ImageGrid
from ray_surface.core.metrics import ate_full, ate_snippets, depth_metrics, write_report
from ray_surface.core.util import seed_everything
from ray_surface.io.config import load_fit_config, write_config
from ray_surface.io.errors import FormatError
from ray_surface.io.pfm import read_pfm
from ray_surface.io.ply import export_pointcloud
from ray_surface.io.poses import read_poses
from ray_surface.scenarios.registry import REGISTRY, make
from ray_surface.scenarios.sequence import TRAJECTORIES, load_sequence


class GradientCheckError(RuntimeError):
    pass


def _size(text: str) -> Tuple[int, int]:
    """`64` or `48x64` (height x width)."""
    try:
        parts = [int(part) for part in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid size '{text}'")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"invalid size '{text}'")
    return parts[0], parts[1]


def render(args) -> None:
    height, width = args.size
    config: Dict = {"height": height, "width": width, "frames": args.frames}
    if args.trajectory is not None:
        config["trajectory"] = args.trajectory
    if args.step is not None:
        config["trajectory_params"] = {"step": args.step}
    if args.seed is not None:
        config["seed"] = args.seed
    scenario = make(args.preset, config)
    scenario.generate(args.out)


def fit(args) -> None:
    sequence = load_sequence(args.dataset)
    config = load_fit_config(args.config) if args.config else FitConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)

    template, poses = None, None
    if args.freeze_pose:
        config = dataclasses.replace(config, learn_pose=False)
        poses = sequence.poses
    if args.known_template:
        config = dataclasses.replace(config, learn_residual=False)
        template = sequence.surface
    image_mask = None if sequence.mask.all() else sequence.mask

    result = fit_scene(
        sequence.frames, config, template=template, poses=poses, image_mask=image_mask
    )

    os.makedirs(args.out, exist_ok=True)
    export_state(result.state, args.out, result.loss_curve)
    write_config(os.path.join(args.out, "fit.cfg"), config.to_dict())
    if not result.diagnostics.empty:
        result.diagnostics.to_csv(os.path.join(args.out, "diagnostics.csv"))
    if result.static:
        logging.warning(f"{args.dataset}: static sequence, exported the initial state unchanged")


def _depth_files(path: str) -> Dict[str, str]:
    """Depth maps keyed by frame name, from a PFM file or a directory with depths/."""
    if os.path.isfile(path):
        return {"": path}
    files = sorted(glob.glob(os.path.join(path, "depths", "*.pfm")))
    if not files:
        raise FormatError(path, "depths", "no depth maps found")
    return {os.path.splitext(os.path.basename(f))[0]: f for f in files}


def eval_depth(args) -> None:
    predictions, truths = _depth_files(args.pred), _depth_files(args.gt)
    if "" in predictions or "" in truths:
        pairs = [(next(iter(predictions.values())), next(iter(truths.values())))]
    else:
        names = sorted(set(predictions) & set(truths))
        if not names:
            raise FormatError(args.pred, "depths", f"no frame in common with {args.gt}")
        pairs = [(predictions[name], truths[name]) for name in names]

    results = [
        depth_metrics(read_pfm(pred), read_pfm(gt), max_depth=args.max_depth).as_dict()
        for pred, gt in pairs
    ]
    report = {key: float(np.mean([r[key] for r in results])) for key in results[0]}
    report["frames"] = len(results)
    write_report(report, args.out, "depth")
    for key, value in report.items():
        print(f"{key} = {value:.6g}")


def _pose_file(path: str, name: str) -> List[Pose]:
    if os.path.isdir(path):
        path = os.path.join(path, name)
    return read_poses(path)


def eval_odom(args) -> None:
    pred = _pose_file(args.pred, "trajectory.txt")
    gt = _pose_file(args.gt, "poses.txt")
    if len(pred) != len(gt):
        raise FormatError(args.pred, "poses", f"{len(pred)} poses but {len(gt)} ground-truth poses")

    report = {"ate": ate_full(pred, gt), "poses": len(gt)}
    if len(gt) >= args.snippet:
        report["ate_snippet_mean"], report["ate_snippet_std"] = ate_snippets(pred, gt, args.snippet)
    write_report(report, args.out, "odometry")
    for key, value in report.items():
        print(f"{key} = {value:.6g}")


def _read_image(path: str) -> np.ndarray:
    if path.lower().endswith(".pfm"):
        return read_pfm(path).astype(np.float64)
    image = mpimg.imread(path)
    if image.dtype == np.uint8:
        image = image / 255.0
    return np.asarray(image, dtype=np.float64)[..., :3]


def pointcloud(args) -> None:
    depth = read_pfm(args.depth).astype(np.float64)
    surface = RaySurface.from_directions(torch.from_numpy(read_pfm(args.surface).astype(np.float64)))
    image = ImageGrid.from_numpy(_read_image(args.image))
    mask = read_pfm(args.mask) > 0.5 if args.mask else None
    count = export_pointcloud(
        ImageGrid.from_numpy(depth), surface, image, args.out, mask=mask, binary=args.binary
    )
    print(f"vertices = {count}")


def gradcheck(args) -> None:
    table = run_suite(eps=args.eps, seed=args.seed or 0)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        table.to_csv(os.path.join(args.out, "gradcheck.csv"), index=False)
    print(table.to_string(index=False))
    failed = table.loc[~table["passed"], "op"].tolist()
    if failed:
        raise GradientCheckError(f"gradient check failed for {', '.join(failed)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ray-surface",
        description="Self-supervised depth, ego-motion and ray-surface estimation",
    )
    parser.add_argument("--seed", type=int, default=None, help="Seed for every random choice.")
    parser.add_argument("--threads", type=int, default=None, help="Number of torch CPU threads.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug.")
    parser.add_argument("--log-file", default=None, help="Write log messages to this file.")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("render", help="Render a synthetic dataset from a preset.")
    sub.add_argument("--preset", default="desk-pinhole-v0", choices=sorted(REGISTRY))
    sub.add_argument("--frames", type=int, default=3)
    sub.add_argument("--size", type=_size, default=(64, 64), help="HxW or a single side.")
    sub.add_argument("--trajectory", choices=sorted(TRAJECTORIES), default=None)
    sub.add_argument("--step", type=float, default=None, help="Camera step between frames.")
    sub.add_argument("--out", required=True, help="Dataset directory to create.")
    sub.set_defaults(handler=render)

    sub = commands.add_parser("fit", help="Fit depth, poses and ray surface to a dataset.")
    sub.add_argument("dataset")
    sub.add_argument("--config", default=None, help="key = value file overriding defaults.")
    sub.add_argument("--out", required=True)
    sub.add_argument("--freeze-pose", action="store_true", help="Hold poses at ground truth.")
    sub.add_argument(
        "--known-template", action="store_true", help="Use the ground-truth rays, no residual."
    )
    sub.set_defaults(handler=fit)

    sub = commands.add_parser("eval-depth", help="Depth metrics of predictions against ground truth.")
    sub.add_argument("pred", help="PFM file or fit output directory.")
    sub.add_argument("gt", help="PFM file or dataset directory.")
    sub.add_argument("--max-depth", type=float, default=80.0)
    sub.add_argument("--out", required=True)
    sub.set_defaults(handler=eval_depth)

    sub = commands.add_parser("eval-odom", help="Trajectory error against ground-truth poses.")
    sub.add_argument("pred", help="Pose file or fit output directory.")
    sub.add_argument("gt", help="Pose file or dataset directory.")
    sub.add_argument("--snippet", type=int, default=5)
    sub.add_argument("--out", required=True)
    sub.set_defaults(handler=eval_odom)

    sub = commands.add_parser("pointcloud", help="Colored PLY from depth and ray surface.")
    sub.add_argument("depth")
    sub.add_argument("surface")
    sub.add_argument("image", help="PFM or PNG image.")
    sub.add_argument("--mask", default=None, help="PFM mask, pixels > 0.5 are kept.")
    sub.add_argument("--binary", action="store_true")
    sub.add_argument("--out", required=True)
    sub.set_defaults(handler=pointcloud)

    sub = commands.add_parser("gradcheck", help="Compare analytic and numeric gradients.")
    sub.add_argument("--eps", type=float, default=1e-5)
    sub.add_argument("--out", default=None)
    sub.set_defaults(handler=gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(
        format="%(asctime)s - %(levelname)s - %(message)s",
        level=level,
        filename=args.log_file,
    )
    if args.threads is not None:
        torch.set_num_threads(args.threads)
    if args.seed is not None:
        seed_everything(args.seed)

    try:
        args.handler(args)
    except (ValueError, RuntimeError, OSError) as error:
        print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
