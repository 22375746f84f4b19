import copy
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from matplotlib.backends.backend_agg import FigureCanvasAgg as FigureCanvas
from matplotlib.figure import Figure

from ray_surface.core import monitoring
from ray_surface.core.camera import (
    Intrinsics,
    RaySurface,
    ResidualSurface,
    compose_surface,
    pinhole_template,
)
from ray_surface.core.geometry import (
    Pose,
    PoseParams,
    euler_to_pose,
    pose_compose,
    pose_inverse,
    pose_to_euler,
    relative_pose,
)
from ray_surface.core.grid import DTYPE, ImageGrid, masked_mean
from ray_surface.core.losses import (
    LossWeights,
    auto_mask,
    erode_mask,
    min_over_context,
    photometric_loss,
    total_loss,
)
from ray_surface.core.monitoring import Monitor
from ray_surface.core.projection import PatchSpec
from ray_surface.core.schedules import lambda_r_schedule, make_schedule
from ray_surface.core.synthesis import synthesize, warp_coords
from ray_surface.core.util import check_keys, deep_dict_merge, seed_everything
from ray_surface.io.pfm import write_pfm
from ray_surface.io.poses import write_poses

ADAM_BETAS = (0.9, 0.999)


class FitError(RuntimeError):
    pass


class DivergenceError(FitError):
    pass


class NonFiniteLossError(FitError):
    pass


def decode_depth(params: torch.Tensor, d_min: float, d_max: float) -> torch.Tensor:
    """Squash unconstrained parameters onto inverse depth in [1/d_max, 1/d_min]."""
    disp_min, disp_max = 1.0 / d_max, 1.0 / d_min
    disp = disp_min + (disp_max - disp_min) * torch.sigmoid(params)
    return (1.0 / disp).clamp(d_min, d_max)


def encode_depth(depth, d_min: float, d_max: float) -> torch.Tensor:
    """Inverse of `decode_depth`; depths are clipped into the open range."""
    depth = torch.as_tensor(depth, dtype=DTYPE)
    disp_min, disp_max = 1.0 / d_max, 1.0 / d_min
    frac = (1.0 / depth - disp_min) / (disp_max - disp_min)
    return torch.logit(frac, eps=1e-12)


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 20
    steps_per_epoch: int = 25
    lr: float = 2e-4
    min_lr: float = 1e-8
    patch: PatchSpec = field(default_factory=PatchSpec)
    tau_start: float = 0.01
    tau_end: float = 5e-4
    tau_schedule: str = "geometric"
    lambda_r_ramp: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    per_frame_surface: bool = False
    seed: int = 0
    d_min: float = 0.1
    d_max: float = 100.0
    half_res_search: bool = True
    min_valid_fraction: float = 0.2
    automask: bool = True
    learn_depth: bool = True
    learn_pose: bool = True
    learn_residual: bool = True
    init_depth: Optional[float] = None
    init_noise: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be >= 1")
        if not self.lr > 0 or not self.min_lr > 0:
            raise ValueError(f"learning rates must be positive, got {self.lr}, {self.min_lr}")
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if not 0.0 <= self.min_valid_fraction <= 1.0:
            raise ValueError(f"min_valid_fraction must lie in [0, 1], got {self.min_valid_fraction}")
        if self.init_depth is not None and not self.d_min < self.init_depth < self.d_max:
            raise ValueError(f"init_depth {self.init_depth} outside ({self.d_min}, {self.d_max})")
        if self.init_noise < 0:
            raise ValueError(f"init_noise must be >= 0, got {self.init_noise}")
        schedule = make_schedule(self.tau_schedule, start=self.tau_start, end=self.tau_end)
        if not schedule.value(0, 1) > 0:
            raise ValueError(f"tau schedule '{self.tau_schedule}' must start above 0")
        lambda_r_schedule(0, self.lambda_r_ramp)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @classmethod
    def default_config(cls) -> Dict:
        """Nested dictionary holding every field's default."""
        return cls().to_dict()

    @classmethod
    def from_dict(cls, config: Dict) -> "FitConfig":
        defaults = cls.default_config()
        check_keys(config, defaults)
        merged = deep_dict_merge(defaults, copy.deepcopy(config))
        merged["patch"] = PatchSpec(**merged["patch"])
        merged["weights"] = LossWeights(**merged["weights"])
        return cls(**merged)

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)


@dataclass
class FitState:
    """Everything the optimizer owns.

    Depth is stored as unconstrained parameters per target frame (decoded by
    `decode_depth`), residuals either once (shared surface) or per frame,
    and six pose parameters per (target, context) pair.
    """

    inv_depth_params: torch.Tensor  # (T, H, W)
    residuals: torch.Tensor  # (S, H, W, 3)
    pose_params: torch.Tensor  # (P, 6)
    template: RaySurface
    targets: List[int]
    pairs: List[Tuple[int, int]]
    d_min: float = 0.1
    d_max: float = 100.0
    lambda_r: float = 0.0
    tau: float = 0.01
    step: int = 0

    @property
    def num_frames(self) -> int:
        return max(max(pair) for pair in self.pairs) + 1

    @property
    def per_frame_surface(self) -> bool:
        return self.residuals.shape[0] > 1

    def depth(self, index: int) -> ImageGrid:
        """Decoded depth of the `index`-th target (not the frame number)."""
        params = self.inv_depth_params[index]
        return ImageGrid(decode_depth(params, self.d_min, self.d_max).unsqueeze(0))

    def residual(self, frame: int) -> ResidualSurface:
        slot = frame if self.per_frame_surface else 0
        return ResidualSurface(self.residuals[slot], self.lambda_r)

    def surface(self, frame: int = 0) -> RaySurface:
        return compose_surface(self.template, self.residual(frame))

    def pair_params(self, index: int) -> PoseParams:
        return PoseParams.from_vector(self.pose_params[index])

    def pair_pose(self, index: int) -> Pose:
        return euler_to_pose(self.pair_params(index))

    def pair_index(self, target: int, context: int) -> int:
        return self.pairs.index((target, context))


@dataclass
class Evaluation:
    loss: Optional[torch.Tensor]
    photometric: float
    valid_fractions: Dict[str, float]
    keep_fractions: Dict[str, float]
    collapsed: List[int]

    @property
    def value(self) -> float:
        return float("nan") if self.loss is None else float(self.loss.detach())


@dataclass
class FitResult:
    state: FitState
    loss_curve: List[float]
    diagnostics: pd.DataFrame
    pair_diagnostics: pd.DataFrame
    static: bool = False
    rejected_steps: int = 0
    held_steps: int = 0


def pair_label(target: int, context: int) -> str:
    return f"{target}->{context}"


def evaluate_state(
    frames: Sequence[ImageGrid],
    state: FitState,
    config: FitConfig,
    image_mask: Optional[torch.Tensor] = None,
) -> Evaluation:
    """Total loss over all targets at the state's current tau and lambda_r.

    Targets whose masks leave no pixel are listed in `collapsed` and
    contribute nothing to the loss.
    """
    height, width = frames[0].height, frames[0].width
    inside = (
        torch.ones(height, width, dtype=torch.bool)
        if image_mask is None
        else torch.as_tensor(image_mask, dtype=torch.bool)
    )
    area = float(inside.sum())

    loss, photometric = None, 0.0
    valid_fractions, keep_fractions, collapsed = {}, {}, []
    surfaces = {}

    for index, target in enumerate(state.targets):
        depth = state.depth(index)
        image = frames[target]
        if target not in surfaces:
            surfaces[target] = state.surface(target)

        warped, masks, unwarped = [], [], []
        for k, (t, context) in enumerate(state.pairs):
            if t != target:
                continue
            if context not in surfaces:
                surfaces[context] = state.surface(context)
            warp = warp_coords(
                depth,
                surfaces[target],
                state.pair_pose(k),
                surfaces[context],
                config.patch,
                state.tau,
                half_res=config.half_res_search,
            )
            synth, mask = synthesize(frames[context], warp, context_mask=image_mask)
            mask = erode_mask(mask & inside)
            valid_fractions[pair_label(t, context)] = float(mask.sum()) / area
            warped.append(photometric_loss(image, synth, mask, config.weights))
            masks.append(mask)
            unwarped.append(photometric_loss(image, frames[context], weights=config.weights))

        reduced, valid = min_over_context(warped, masks)
        keep = torch.ones_like(valid)
        if config.automask:
            static, _ = min_over_context(unwarped, [inside] * len(unwarped))
            keep = auto_mask(reduced, static)
        kept = valid & keep
        keep_fractions[str(target)] = float(kept.sum()) / area
        if not bool(kept.any()):
            collapsed.append(target)
            continue

        target_loss = total_loss(warped, masks, depth, image, config.weights, keep=keep)
        photometric += float(masked_mean(reduced.data[0].detach(), kept.to(DTYPE)))
        loss = target_loss if loss is None else loss + target_loss

    return Evaluation(loss, photometric, valid_fractions, keep_fractions, collapsed)


class SceneFitter:
    def __init__(
        self,
        frames: Sequence[ImageGrid],
        config: Optional[FitConfig] = None,
        template: Optional[RaySurface] = None,
        poses: Optional[Sequence[Pose]] = None,
        image_mask: Optional[torch.Tensor] = None,
        state: Optional[FitState] = None,
    ):
        self.config = FitConfig() if config is None else config
        self.frames = [frame if isinstance(frame, ImageGrid) else ImageGrid.from_numpy(frame) for frame in frames]
        if len(self.frames) < 3:
            raise ValueError(f"fitting needs at least 3 frames, got {len(self.frames)}")
        shapes = {frame.shape for frame in self.frames}
        if len(shapes) != 1:
            raise ValueError(f"frames differ in shape: {sorted(shapes)}")
        self.height, self.width = self.frames[0].height, self.frames[0].width
        if poses is not None and len(poses) != len(self.frames):
            raise ValueError(f"{len(poses)} poses for {len(self.frames)} frames")
        self.image_mask = None if image_mask is None else torch.as_tensor(image_mask, dtype=torch.bool)

        self.rng = seed_everything(self.config.seed)
        self.state = self.initial_state(template, poses) if state is None else state
        self._set_trainable()

        trainable = [p for p in self._parameters() if p.requires_grad]
        if not trainable:
            raise ValueError("nothing to optimize: depth, pose and residual are all frozen")
        self.lr = self.config.lr
        self.optimizer = torch.optim.Adam(trainable, lr=self.lr, betas=ADAM_BETAS)
        self.tau_schedule = make_schedule(
            self.config.tau_schedule, start=self.config.tau_start, end=self.config.tau_end
        )

        self.monitor = Monitor(
            scalar_metrics={
                "loss": monitoring.loss,
                "photometric": monitoring.photometric,
                "valid fraction": monitoring.valid_fraction,
                "automask fraction": monitoring.automask_fraction,
                "tau": monitoring.temperature,
                "lambda_r": monitoring.residual_weight,
                "lr": monitoring.learning_rate,
            },
            pair_metrics={"pair valid fraction": monitoring.pair_valid_fraction},
        )
        self.monitor.reset()
        self.last_evaluation: Optional[Evaluation] = None
        self.rejected_steps = 0
        self.held_steps = 0
        self._snapshot = None

    def initial_state(
        self, template: Optional[RaySurface], poses: Optional[Sequence[Pose]]
    ) -> FitState:
        config = self.config
        num_frames, height, width = len(self.frames), self.height, self.width
        targets = list(range(1, num_frames - 1))
        pairs = [(t, c) for t in targets for c in (t - 1, t + 1)]

        if template is None:
            template = pinhole_template(height, width, Intrinsics.default(height, width))
        if (template.height, template.width) != (height, width):
            raise ValueError("template size does not match the frames")

        start = 0.0
        if config.init_depth is not None:
            start = float(encode_depth(config.init_depth, config.d_min, config.d_max))
        inv_depth = torch.full((len(targets), height, width), start, dtype=DTYPE)
        if config.init_noise > 0:
            noise = self.rng.standard_normal(inv_depth.shape)
            inv_depth = inv_depth + config.init_noise * torch.from_numpy(noise)

        slots = num_frames if config.per_frame_surface else 1
        residuals = torch.zeros(slots, height, width, 3, dtype=DTYPE)

        pose_params = torch.zeros(len(pairs), 6, dtype=DTYPE)
        if poses is not None:
            for k, (t, c) in enumerate(pairs):
                relative = relative_pose(poses[t], poses[c])
                pose_params[k] = pose_to_euler(relative).vector().to(DTYPE)

        return FitState(
            inv_depth_params=inv_depth,
            residuals=residuals,
            pose_params=pose_params,
            template=template,
            targets=targets,
            pairs=pairs,
            d_min=config.d_min,
            d_max=config.d_max,
            tau=config.tau_start,
        )

    def _parameters(self) -> List[torch.Tensor]:
        return [self.state.inv_depth_params, self.state.residuals, self.state.pose_params]

    def _set_trainable(self) -> None:
        flags = (self.config.learn_depth, self.config.learn_residual, self.config.learn_pose)
        for tensor, flag in zip(self._parameters(), flags):
            tensor.requires_grad_(flag)

    def evaluate(self) -> Evaluation:
        return evaluate_state(self.frames, self.state, self.config, self.image_mask)

    def healthy(self, evaluation: Evaluation) -> bool:
        if evaluation.collapsed or evaluation.loss is None:
            return False
        return all(
            fraction >= self.config.min_valid_fraction
            for fraction in evaluation.valid_fractions.values()
        )

    def _take_snapshot(self):
        tensors = [p.detach().clone() for p in self._parameters()]
        return tensors, copy.deepcopy(self.optimizer.state_dict())

    def _rollback(self, evaluation: Evaluation) -> None:
        """Restore the state before the previous update and halve the learning rate."""
        if self._snapshot is None:
            raise DivergenceError(
                f"initial state fails the valid-pixel guard "
                f"(valid fractions {evaluation.valid_fractions}, collapsed targets {evaluation.collapsed})"
            )
        tensors, optimizer_state = self._snapshot
        with torch.no_grad():
            for param, saved in zip(self._parameters(), tensors):
                param.copy_(saved)
        self.optimizer.load_state_dict(copy.deepcopy(optimizer_state))

        self.lr /= 2
        self.rejected_steps += 1
        if self.lr < self.config.min_lr:
            raise DivergenceError(
                f"valid-pixel guard still failing at step {self.state.step} "
                f"with learning rate {self.lr:.3g} below min_lr {self.config.min_lr:.3g}"
            )
        for group in self.optimizer.param_groups:
            group["lr"] = self.lr
        logging.warning(
            f"Step {self.state.step}: rejected update (valid fractions "
            f"{evaluation.valid_fractions}, collapsed {evaluation.collapsed}); "
            f"retrying with lr {self.lr:.3g}"
        )

    def step(self) -> float:
        """One Adam update on the full scene; returns the loss before the update.

        If the state fails the valid-pixel guard at the newly scheduled
        temperature but passes at the previous one, the previous temperature
        is held for this step and nothing is rolled back. Only a state that
        fails at the previous temperature too rejects the last update.
        """
        total = max(self.config.total_steps - 1, 0)
        previous = self.state.tau
        self.state.tau = self.tau_schedule.value(min(self.state.step, total), total)

        self.optimizer.zero_grad()
        evaluation = self.evaluate()
        if not self.healthy(evaluation) and self.state.tau != previous:
            scheduled, failed = self.state.tau, evaluation
            self.state.tau = previous
            evaluation = self.evaluate()
            if self.healthy(evaluation):
                self.held_steps += 1
                logging.debug(
                    f"Step {self.state.step}: tau {scheduled:.4g} fails the valid-pixel "
                    f"guard (valid fractions {failed.valid_fractions}); holding tau {previous:.4g}"
                )
        while not self.healthy(evaluation):
            self._rollback(evaluation)
            self.optimizer.zero_grad()
            evaluation = self.evaluate()
        assert evaluation.loss is not None, "healthy evaluation without a loss"

        if not torch.isfinite(evaluation.loss):
            raise NonFiniteLossError(f"loss became {evaluation.value} at step {self.state.step}")

        self._snapshot = self._take_snapshot()
        evaluation.loss.backward()
        self.optimizer.step()

        self.last_evaluation = evaluation
        self.state.step += 1
        self.monitor.update(self)
        return evaluation.value

    def fit(self) -> FitResult:
        config = self.config
        with torch.no_grad():
            self.state.tau = config.tau_start
            first = self.evaluate()
        if first.collapsed:
            logging.warning(
                f"Static sequence: the automask removes every pixel of target(s) "
                f"{first.collapsed}; nothing to fit"
            )
            return FitResult(self.state, [], pd.DataFrame(), pd.DataFrame(), static=True)

        curve = []
        for epoch in range(config.epochs):
            self.state.lambda_r = lambda_r_schedule(epoch, config.lambda_r_ramp)
            losses = [self.step() for _ in range(config.steps_per_epoch)]
            curve.append(float(np.mean(losses)))

            info = self.monitor.info()
            logging.info(
                f"Epoch {epoch}: loss {curve[-1]:.6f}, valid {info['valid fraction']:.3f}, "
                f"tau {self.state.tau:.4g}, lambda_r {self.state.lambda_r:.2f}, lr {self.lr:.3g}"
            )

        scalars, pairs = self.monitor.load_results()
        return FitResult(
            self.state,
            curve,
            scalars,
            pairs,
            rejected_steps=self.rejected_steps,
            held_steps=self.held_steps,
        )


def fit_scene(
    frames: Sequence[ImageGrid], config: Optional[FitConfig] = None, **kwargs
) -> FitResult:
    """Fit depth, poses and the ray surface of a sequence; see `SceneFitter`."""
    return SceneFitter(frames, config, **kwargs).fit()


def trajectory(state: FitState) -> List[Pose]:
    """Camera-to-world poses of every frame accumulated from the pair estimates.

    Frame 0 sits at the identity; frame 1 comes from the (1 -> 0) pair and
    every later frame t + 1 from the (t -> t + 1) pair.
    """
    with torch.no_grad():
        poses = [Pose.identity(), state.pair_pose(state.pair_index(1, 0))]
        for t in range(1, state.num_frames - 1):
            step = state.pair_pose(state.pair_index(t, t + 1))
            poses.append(pose_compose(poses[-1], pose_inverse(step)))
    assert len(poses) == state.num_frames
    return [Pose(p.rotation.detach().clone(), p.translation.detach().clone()) for p in poses]


def plot_loss_curve(curve: Sequence[float], path: str) -> None:
    fig = Figure(figsize=(5, 3.5))
    FigureCanvas(fig)
    ax = fig.add_subplot(111)
    epochs = np.arange(1, len(curve) + 1)
    ax.plot(epochs, curve, marker="o")
    if len(curve) and min(curve) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)


STATE_FILE = "state.npz"


def export_state(
    state: FitState, directory: str, loss_curve: Optional[Sequence[float]] = None
) -> List[str]:
    """Write depths, surface(s), poses and the exact state to `directory`."""
    written = []
    os.makedirs(os.path.join(directory, "depths"), exist_ok=True)
    with torch.no_grad():
        for index, target in enumerate(state.targets):
            path = os.path.join(directory, "depths", f"{target:06d}.pfm")
            write_pfm(path, state.depth(index).numpy()[..., 0])
            written.append(path)

        if state.per_frame_surface:
            os.makedirs(os.path.join(directory, "surfaces"), exist_ok=True)
            for frame in range(state.num_frames):
                path = os.path.join(directory, "surfaces", f"{frame:06d}.pfm")
                write_pfm(path, state.surface(frame).rays.numpy())
                written.append(path)
        else:
            path = os.path.join(directory, "surface.pfm")
            write_pfm(path, state.surface().rays.numpy())
            written.append(path)

        path = os.path.join(directory, "poses.txt")
        write_poses(path, [state.pair_pose(k) for k in range(len(state.pairs))])
        written.append(path)

    path = os.path.join(directory, "trajectory.txt")
    write_poses(path, trajectory(state))
    written.append(path)

    path = os.path.join(directory, STATE_FILE)
    np.savez(
        path,
        inv_depth_params=state.inv_depth_params.detach().numpy(),
        residuals=state.residuals.detach().numpy(),
        pose_params=state.pose_params.detach().numpy(),
        template=state.template.rays.detach().numpy(),
        targets=np.asarray(state.targets, dtype=np.int64),
        pairs=np.asarray(state.pairs, dtype=np.int64),
        scalars=np.asarray([state.d_min, state.d_max, state.lambda_r, state.tau]),
        step=np.asarray(state.step, dtype=np.int64),
    )
    written.append(path)

    if loss_curve:
        path = os.path.join(directory, "loss.png")
        plot_loss_curve(loss_curve, path)
        written.append(path)

    logging.info(f"Exported fit state to {directory} ({len(written)} files)")
    return written


def import_state(directory: str) -> FitState:
    """Reload the exact state written by `export_state`."""
    with np.load(os.path.join(directory, STATE_FILE)) as data:
        d_min, d_max, lambda_r, tau = (float(x) for x in data["scalars"])
        return FitState(
            inv_depth_params=torch.from_numpy(data["inv_depth_params"].copy()),
            residuals=torch.from_numpy(data["residuals"].copy()),
            pose_params=torch.from_numpy(data["pose_params"].copy()),
            template=RaySurface(torch.from_numpy(data["template"].copy())),
            targets=[int(t) for t in data["targets"]],
            pairs=[(int(t), int(c)) for t, c in data["pairs"]],
            d_min=d_min,
            d_max=d_max,
            lambda_r=lambda_r,
            tau=tau,
            step=int(data["step"]),
        )
