import json

import pytest

from ray_surface.cli import main
from ray_surface.core.fit import FitConfig
from ray_surface.core.projection import PatchSpec
from ray_surface.io.config import write_config
from ray_surface.io.ply import read_ply
from ray_surface.io.poses import read_poses, write_poses

TINY = FitConfig(
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


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["render", "--preset", "desk-pinhole-v0", "--size", "16", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def fitted(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    config = out / "tiny.cfg"
    write_config(config, TINY.to_dict())
    assert main(["fit", str(dataset), "--config", str(config), "--out", str(out)]) == 0
    return out


def test_render_writes_a_dataset(dataset):
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["frames"] == ["000000", "000001", "000002"]
    assert manifest["height"] == manifest["width"] == 16
    assert manifest["preset"] == "desk-pinhole-v0"
    assert (dataset / "frames" / "000002.png").is_file()


def test_fit_writes_results(fitted):
    for name in ("depths/000001.pfm", "surface.pfm", "poses.txt", "trajectory.txt", "fit.cfg", "diagnostics.csv"):
        assert (fitted / name).is_file()
    assert len(read_poses(fitted / "trajectory.txt")) == 3


def test_repeated_fit_writes_identical_files(dataset, fitted, tmp_path):
    config = tmp_path / "tiny.cfg"
    write_config(config, TINY.to_dict())
    out = tmp_path / "again"
    assert main(["fit", str(dataset), "--config", str(config), "--out", str(out)]) == 0
    for name in ("depths/000001.pfm", "surface.pfm", "poses.txt"):
        assert (out / name).read_bytes() == (fitted / name).read_bytes()


def test_fit_with_known_pose_and_camera(dataset, tmp_path):
    config = tmp_path / "tiny.cfg"
    write_config(config, TINY.to_dict())
    argv = ["fit", str(dataset), "--config", str(config), "--out", str(tmp_path / "out")]
    assert main(argv + ["--freeze-pose", "--known-template"]) == 0


def test_eval_depth(dataset, fitted, tmp_path, capsys):
    assert main(["eval-depth", str(fitted), str(dataset), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["kind"] == "depth"
    assert report["metrics"]["frames"] == 1.0
    assert 0.0 <= report["metrics"]["delta1"] <= 1.0
    assert "abs_rel = " in capsys.readouterr().out


def test_eval_depth_single_files(dataset, tmp_path):
    gt = dataset / "depths" / "000001.pfm"
    assert main(["eval-depth", str(gt), str(gt), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["metrics"]["abs_rel"] == pytest.approx(0.0, abs=1e-12)


def test_eval_odom(dataset, fitted, tmp_path):
    assert main(["eval-odom", str(fitted), str(dataset), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["kind"] == "odometry"
    assert report["metrics"]["poses"] == 3.0
    assert report["metrics"]["ate"] >= 0.0
    assert "ate_snippet_mean" not in report["metrics"]


def test_eval_odom_length_mismatch(dataset, tmp_path, capsys):
    short = tmp_path / "short.txt"
    write_poses(short, read_poses(dataset / "poses.txt")[:2])
    assert main(["eval-odom", str(short), str(dataset), "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error: FormatError: ")


def test_pointcloud(dataset, tmp_path, capsys):
    out = tmp_path / "cloud.ply"
    argv = [
        "pointcloud",
        str(dataset / "depths" / "000000.pfm"),
        str(dataset / "surface.pfm"),
        str(dataset / "frames" / "000000.png"),
        "--mask",
        str(dataset / "mask.pfm"),
        "--binary",
        "--out",
        str(out),
    ]
    assert main(argv) == 0
    points, colors = read_ply(out)
    assert len(points) == len(colors) > 0
    assert f"vertices = {len(points)}" in capsys.readouterr().out


def test_missing_dataset_reports_one_error_line(tmp_path, capsys):
    code = main(["fit", str(tmp_path / "missing"), "--out", str(tmp_path / "out")])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith("error: FormatError: ")


def test_bad_config_is_an_error(dataset, tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("learning_rate = 0.1\n")
    assert main(["fit", str(dataset), "--config", str(config), "--out", str(tmp_path)]) == 1
    assert "learning_rate" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["render"],
        ["render", "--preset", "desk-spherical-v0", "--out", "x"],
        ["render", "--size", "0x4", "--out", "x"],
        ["eval-odom", "a"],
    ],
)
def test_usage_errors_exit_with_status_two(argv):
    with pytest.raises(SystemExit) as error:
        main(argv)
    assert error.value.code == 2


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "gradcheck.csv").is_file()
    assert "self-test (doubled gradient)" in capsys.readouterr().out
