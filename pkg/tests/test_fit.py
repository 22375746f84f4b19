import dataclasses
import logging
import os

import numpy as np
import pytest
import torch

from ray_surface.core.camera import Intrinsics, pinhole_template
from ray_surface.core.fit import (
    DivergenceError,
    Evaluation,
    FitConfig,
    NonFiniteLossError,
    SceneFitter,
    decode_depth,
    encode_depth,
    evaluate_state,
    export_state,
    fit_scene,
    import_state,
    trajectory,
)
from ray_surface.core.geometry import relative_pose
from ray_surface.core.losses import LossWeights
from ray_surface.core.metrics import ate_full, depth_metrics, positions, surface_cov
from ray_surface.core.projection import PatchSpec, surface_angular_error
from ray_surface.io.config import load_fit_config
from ray_surface.scenarios.cameras import oracle_ray_surface
from ray_surface.scenarios.registry import make

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")

SMALL = FitConfig(
    epochs=2,
    steps_per_epoch=2,
    lr=0.01,
    patch=PatchSpec(5, 5),
    tau_start=0.01,
    tau_end=0.001,
    half_res_search=False,
    init_depth=1.0,
    d_max=10.0,
)


def small_sequence(frames=3, trajectory="lateral", size=16):
    scenario = make(
        "desk-pinhole-v0",
        {"height": size, "width": size, "frames": frames, "trajectory": trajectory},
    )
    return scenario.render()


@pytest.fixture(scope="module")
def sequence():
    return small_sequence()


def test_depth_codec():
    depths = torch.tensor([0.15, 0.5, 1.0, 7.0, 90.0], dtype=torch.float64)
    params = encode_depth(depths, 0.1, 100.0)
    torch.testing.assert_close(decode_depth(params, 0.1, 100.0), depths, rtol=1e-9, atol=0)

    extreme = decode_depth(torch.tensor([-60.0, 0.0, 60.0], dtype=torch.float64), 0.1, 100.0)
    assert float(extreme.min()) >= 0.1 and float(extreme.max()) <= 100.0
    assert float(extreme[0]) > float(extreme[2])


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(epochs=0)
    with pytest.raises(ValueError):
        FitConfig(d_min=2.0, d_max=1.0)
    with pytest.raises(ValueError):
        FitConfig(init_depth=500.0)
    with pytest.raises(ValueError):
        FitConfig(min_valid_fraction=1.5)
    with pytest.raises(ValueError):
        FitConfig(tau_start=0.0, tau_schedule="linear")


def test_fit_config_from_dict():
    config = FitConfig.from_dict({"lr": 0.05, "patch": {"h": 9}})
    assert config.lr == 0.05
    assert config.patch == PatchSpec(9, 41)
    assert FitConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ValueError):
        FitConfig.from_dict({"learning_rate": 0.1})
    with pytest.raises(ValueError):
        FitConfig.from_dict({"patch": {"depth": 3}})


def test_fitter_validation(sequence):
    with pytest.raises(ValueError):
        SceneFitter(sequence.frames[:2], SMALL)
    with pytest.raises(ValueError):
        SceneFitter(sequence.frames, SMALL, poses=sequence.poses[:2])
    frozen = dataclasses.replace(SMALL, learn_depth=False, learn_pose=False, learn_residual=False)
    with pytest.raises(ValueError):
        SceneFitter(sequence.frames, frozen)
    wrong = pinhole_template(8, 8, Intrinsics.default(8, 8))
    with pytest.raises(ValueError):
        SceneFitter(sequence.frames, SMALL, template=wrong)


def test_initial_state_layout():
    frames = small_sequence(frames=5).frames
    fitter = SceneFitter(frames, SMALL)
    state = fitter.state
    assert state.targets == [1, 2, 3]
    assert state.pairs == [(1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (3, 4)]
    assert state.inv_depth_params.shape == (3, 16, 16)
    assert state.residuals.shape == (1, 16, 16, 3)
    assert state.pose_params.shape == (6, 6)
    np.testing.assert_allclose(state.depth(0).numpy(), 1.0, rtol=1e-9)

    per_frame = SceneFitter(frames, dataclasses.replace(SMALL, per_frame_surface=True))
    assert per_frame.state.residuals.shape == (5, 16, 16, 3)


def test_known_poses_initialize_pairs_and_trajectory():
    seq = small_sequence(frames=4, trajectory="orbit")
    fitter = SceneFitter(seq.frames, SMALL, poses=seq.poses)
    state = fitter.state
    for k, (t, c) in enumerate(state.pairs):
        expected = relative_pose(seq.poses[t], seq.poses[c]).matrix()
        torch.testing.assert_close(state.pair_pose(k).matrix(), expected, atol=1e-9, rtol=0)

    for estimate, truth in zip(trajectory(state), seq.poses):
        torch.testing.assert_close(estimate.matrix(), truth.matrix(), atol=1e-9, rtol=0)


def test_zero_residual_weight_keeps_template(sequence):
    fitter = SceneFitter(sequence.frames, SMALL)
    state = fitter.state
    with torch.no_grad():
        state.residuals.normal_(0.0, 0.5)
    state.lambda_r = 0.0
    torch.testing.assert_close(state.surface().rays, state.template.rays, atol=1e-12, rtol=0)
    state.lambda_r = 1.0
    assert not torch.allclose(state.surface().rays, state.template.rays)


def test_fit_is_deterministic(sequence):
    first = fit_scene(sequence.frames, SMALL)
    second = fit_scene(sequence.frames, SMALL)
    assert len(first.loss_curve) == SMALL.epochs
    assert first.loss_curve == second.loss_curve
    torch.testing.assert_close(first.state.inv_depth_params, second.state.inv_depth_params, atol=0, rtol=0)
    torch.testing.assert_close(first.state.pose_params, second.state.pose_params, atol=0, rtol=0)

    assert not first.static
    assert len(first.diagnostics) == SMALL.total_steps
    assert {"loss", "valid fraction", "tau", "lr"} <= set(first.diagnostics.columns)
    assert first.diagnostics["valid fraction"].between(0.0, 1.0).all()
    assert "pair valid fraction" in first.pair_diagnostics.columns
    assert first.state.step == SMALL.total_steps


def test_static_sequence_is_reported():
    seq = small_sequence(trajectory="static")
    result = fit_scene(seq.frames, SMALL)
    assert result.static
    assert result.loss_curve == []
    assert result.state.step == 0


def test_export_import_round_trip(sequence, tmp_path):
    result = fit_scene(sequence.frames, SMALL)
    written = export_state(result.state, str(tmp_path), result.loss_curve)
    for name in ("depths/000001.pfm", "surface.pfm", "poses.txt", "trajectory.txt", "state.npz", "loss.png"):
        assert str(tmp_path / name) in written
        assert (tmp_path / name).is_file()

    restored = import_state(str(tmp_path))
    assert restored.targets == result.state.targets
    assert restored.pairs == result.state.pairs
    assert restored.step == result.state.step
    assert restored.tau == result.state.tau

    with torch.no_grad():
        before = evaluate_state(sequence.frames, result.state, SMALL).value
        after = evaluate_state(sequence.frames, restored, SMALL).value
        norms = restored.surface().rays.norm(dim=-1)
        depth = restored.depth(0).numpy()
    assert after == pytest.approx(before, rel=1e-12)
    torch.testing.assert_close(norms, torch.ones_like(norms), atol=1e-12, rtol=0)
    assert depth.min() >= SMALL.d_min and depth.max() <= SMALL.d_max


def test_per_frame_surfaces_are_exported(sequence, tmp_path):
    config = dataclasses.replace(SMALL, epochs=1, steps_per_epoch=1, per_frame_surface=True)
    result = fit_scene(sequence.frames, config)
    export_state(result.state, str(tmp_path))
    assert sorted(os.listdir(tmp_path / "surfaces")) == ["000000.pfm", "000001.pfm", "000002.pfm"]
    assert not (tmp_path / "loss.png").exists()


def test_guard_rejects_initial_state():
    seq = small_sequence()
    config = dataclasses.replace(SMALL, learn_pose=False, min_valid_fraction=1.0)
    # the context views shift the border columns out of the image
    fitter = SceneFitter(seq.frames, config, poses=seq.poses)
    with pytest.raises(DivergenceError):
        fitter.step()


def test_fit_logs_every_epoch(sequence, caplog):
    with caplog.at_level(logging.INFO):
        result = fit_scene(sequence.frames, SMALL)
    for epoch in range(SMALL.epochs):
        assert f"Epoch {epoch}: loss {result.loss_curve[epoch]:.6f}, valid " in caplog.text


def test_temperature_step_alone_holds_the_temperature(sequence, monkeypatch):
    fitter = SceneFitter(sequence.frames, SMALL)
    # temperatures run 0.01, 0.0046, 0.0022, 0.001; the last two fail the guard
    monkeypatch.setattr(
        fitter, "healthy", lambda evaluation: evaluation.loss is not None and fitter.state.tau > 0.003
    )
    result = fitter.fit()

    assert result.held_steps == 2
    assert result.rejected_steps == 0
    assert fitter.lr == SMALL.lr
    assert result.state.step == SMALL.total_steps
    assert result.state.tau == pytest.approx(0.01 * 0.1 ** (1 / 3))


def test_rejected_update_is_rolled_back(sequence, monkeypatch):
    fitter = SceneFitter(sequence.frames, SMALL)
    fitter.step()
    after_first = fitter.state.inv_depth_params.detach().clone()

    # fails at the scheduled and at the held temperature, then passes after the rollback
    verdicts = iter([False, False, True])
    healthy = fitter.healthy
    monkeypatch.setattr(fitter, "healthy", lambda evaluation: next(verdicts, True) and healthy(evaluation))
    fitter.step()

    assert fitter.rejected_steps == 1
    assert fitter.lr == pytest.approx(SMALL.lr / 2)
    assert all(group["lr"] == fitter.lr for group in fitter.optimizer.param_groups)
    # the retried update started again from the state before the first step
    assert not torch.equal(fitter.state.inv_depth_params.detach(), after_first)
    assert fitter.state.step == 2


def test_learning_rate_floor_raises(sequence, monkeypatch):
    config = dataclasses.replace(SMALL, min_lr=1e-3)
    fitter = SceneFitter(sequence.frames, config)
    fitter.step()
    monkeypatch.setattr(fitter, "healthy", lambda evaluation: False)
    with pytest.raises(DivergenceError):
        fitter.step()
    # 0.01 is halved four times before dropping below 1e-3
    assert fitter.rejected_steps == 4


def test_non_finite_loss_raises(sequence, monkeypatch):
    fitter = SceneFitter(sequence.frames, SMALL)
    broken = Evaluation(
        loss=torch.tensor(float("nan"), dtype=torch.float64, requires_grad=True),
        photometric=0.0,
        valid_fractions={"1->0": 1.0, "1->2": 1.0},
        keep_fractions={"1": 1.0},
        collapsed=[],
    )
    monkeypatch.setattr(fitter, "evaluate", lambda: broken)
    with pytest.raises(NonFiniteLossError):
        fitter.step()


def ground_truth_fitter(seq, config):
    fitter = SceneFitter(seq.frames, config, template=seq.surface, poses=seq.poses)
    with torch.no_grad():
        for index, target in enumerate(fitter.state.targets):
            depth = seq.depths[target].data[0]
            fitter.state.inv_depth_params[index] = encode_depth(depth, config.d_min, config.d_max)
    return fitter


def depth_gradient_norm(fitter):
    fitter.state.inv_depth_params.grad = None
    fitter.evaluate().loss.backward()
    return float(fitter.state.inv_depth_params.grad.norm())


def test_ground_truth_is_nearly_stationary():
    seq = make(
        "desk-pinhole-v0",
        {
            "height": 32,
            "width": 32,
            "scene": {"desk": False, "poster": False},
            "trajectory_params": {"step": 0.1},
        },
    ).render()
    config = FitConfig(
        patch=PatchSpec(9, 9),
        tau_start=2e-3,
        tau_end=2e-3,
        half_res_search=False,
        automask=False,
        weights=LossWeights(alpha=1.0, lambda_d=0.0),
        learn_pose=False,
        learn_residual=False,
        d_max=10.0,
    )
    fitter = ground_truth_fitter(seq, config)
    at_truth = depth_gradient_norm(fitter)

    rng = np.random.default_rng(0)
    with torch.no_grad():
        for index, target in enumerate(fitter.state.targets):
            depth = seq.depths[target].data[0] * torch.from_numpy(rng.uniform(0.9, 1.1, (32, 32)))
            fitter.state.inv_depth_params[index] = encode_depth(depth, config.d_min, config.d_max)
    perturbed = depth_gradient_norm(fitter)

    assert at_truth < 0.5 * perturbed


def median_abs_rel(result, sequence, index=0):
    with torch.no_grad():
        pred = result.state.depth(index).numpy()[..., 0]
    gt = sequence.depths[result.state.targets[index]].numpy()[..., 0]
    gt = np.where(sequence.mask, gt, 0.0)
    return depth_metrics(pred, gt).abs_rel


@pytest.fixture(scope="module")
def pinhole_64():
    return make(
        "desk-pinhole-v0",
        {"height": 64, "width": 64, "frames": 3, "trajectory_params": {"step": 0.1}},
    ).render()


@pytest.mark.slow
def test_depth_recovery_with_known_pose_and_camera(pinhole_64):
    config = dataclasses.replace(
        load_fit_config(os.path.join(CONFIGS, "fit-fast.cfg")),
        patch=PatchSpec(13, 13),
        learn_pose=False,
        learn_residual=False,
    )
    assert config.total_steps == 500
    result = fit_scene(
        pinhole_64.frames, config, template=pinhole_64.surface, poses=pinhole_64.poses
    )
    assert median_abs_rel(result, pinhole_64) < 0.05


@pytest.mark.slow
def test_joint_depth_and_pose_recovery(pinhole_64):
    config = dataclasses.replace(
        load_fit_config(os.path.join(CONFIGS, "fit-fast.cfg")),
        epochs=40,
        patch=PatchSpec(13, 13),
        learn_residual=False,
    )
    result = fit_scene(pinhole_64.frames, config, template=pinhole_64.surface)
    assert median_abs_rel(result, pinhole_64) < 0.10

    centers = positions(pinhole_64.poses)
    extent = max(np.linalg.norm(a - b) for a in centers for b in centers)
    assert ate_full(trajectory(result.state), pinhole_64.poses) < 0.02 * extent


@pytest.mark.slow
def test_learned_residual_beats_pinhole_template_on_fisheye():
    seq = make("desk-fisheye-v0", {"height": 64, "width": 64, "frames": 3}).render()
    base = dataclasses.replace(
        load_fit_config(os.path.join(CONFIGS, "fit-fast.cfg")),
        epochs=30,
        lambda_r_ramp=10,
    )
    frozen = fit_scene(
        seq.frames,
        dataclasses.replace(base, learn_residual=False),
        poses=seq.poses,
        image_mask=seq.mask,
    )
    learned = fit_scene(seq.frames, base, poses=seq.poses, image_mask=seq.mask)
    assert median_abs_rel(learned, seq) <= 0.7 * median_abs_rel(frozen, seq)

    oracle, inside = oracle_ray_surface(seq.camera, 64, 64)
    mask = torch.from_numpy(inside)
    with torch.no_grad():
        template_error = surface_angular_error(learned.state.template, oracle, mask)
        learned_error = surface_angular_error(learned.state.surface(), oracle, mask)
    assert learned_error <= 0.5 * template_error


@pytest.mark.slow
def test_per_frame_surfaces_agree():
    seq = make("desk-pinhole-v0", {"height": 64, "width": 64, "frames": 5}).render()
    config = dataclasses.replace(
        load_fit_config(os.path.join(CONFIGS, "fit-fast.cfg")), per_frame_surface=True
    )
    result = fit_scene(seq.frames, config, poses=seq.poses)
    with torch.no_grad():
        surfaces = [result.state.surface(frame) for frame in range(len(seq))]
    assert surface_cov(surfaces) < 0.05
