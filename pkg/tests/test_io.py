import json
import os

import numpy as np
import pytest
import torch

from ray_surface.core.camera import Intrinsics, pinhole_template
from ray_surface.core.fit import FitConfig
from ray_surface.core.geometry import PoseParams, euler_to_pose
from ray_surface.core.grid import ImageGrid
from ray_surface.core.losses import ZeroValidPixelsError
from ray_surface.io.config import (
    format_value,
    load_fit_config,
    parse_value,
    read_config,
    write_config,
)
from ray_surface.io.dataset import (
    MANIFEST_FILE,
    Manifest,
    quantize_surface,
    read_dataset,
    write_dataset,
)
from ray_surface.io.errors import FormatError
from ray_surface.io.pfm import read_pfm, write_pfm
from ray_surface.io.ply import export_pointcloud, read_ply, write_ply
from ray_surface.io.poses import read_poses, write_poses

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def random_poses(rng, count):
    return [
        euler_to_pose(
            PoseParams(torch.from_numpy(rng.normal(size=3)), torch.from_numpy(rng.uniform(-1, 1, 3)))
        )
        for _ in range(count)
    ]


def small_dataset(root, rng, frames=3, height=4, width=5):
    rays = pinhole_template(height, width, Intrinsics.default(height, width)).rays.numpy()
    mask = np.ones((height, width), dtype=bool)
    mask[0, 0] = False
    return write_dataset(
        root,
        frames=[rng.uniform(size=(height, width, 3)) for _ in range(frames)],
        depths=[rng.uniform(0.5, 3.0, size=(height, width)) for _ in range(frames)],
        poses=random_poses(rng, frames),
        surface=rays,
        mask=mask,
        camera={"kind": "pinhole", "fx": 2.5},
        preset="unit-test",
    )


@pytest.mark.parametrize("shape", [(3, 4), (3, 4, 3)])
def test_pfm_round_trip_is_exact_for_float32(tmp_path, shape):
    rng = np.random.default_rng(0)
    array = rng.normal(size=shape).astype(np.float32)
    path = tmp_path / "map.pfm"
    write_pfm(path, array)
    loaded = read_pfm(path)
    assert loaded.dtype == np.float32
    np.testing.assert_array_equal(loaded, array)


def test_pfm_stores_rows_bottom_up(tmp_path):
    path = tmp_path / "rows.pfm"
    write_pfm(path, np.array([[1.0, 2.0], [3.0, 4.0]]))
    with open(path, "rb") as f:
        assert f.readline() == b"Pf\n"
        assert f.readline() == b"2 2\n"
        assert f.readline() == b"-1.0\n"
        first_row = np.frombuffer(f.read(8), dtype="<f4")
    np.testing.assert_array_equal(first_row, [3.0, 4.0])


def test_pfm_reads_big_endian(tmp_path):
    path = tmp_path / "big.pfm"
    with open(path, "wb") as f:
        f.write(b"Pf\n2 1\n1.0\n")
        f.write(np.array([1.5, -2.0], dtype=">f4").tobytes())
    np.testing.assert_array_equal(read_pfm(path), [[1.5, -2.0]])


@pytest.mark.parametrize(
    "content, field",
    [
        (b"P6\n1 1\n-1.0\n", "kind"),
        (b"Pf\n1\n-1.0\n", "dimensions"),
        (b"Pf\n1 1\n0\n", "scale"),
        (b"Pf\n2 2\n-1.0\n" + b"\x00" * 12, "data"),
        (b"Pf\n", "dimensions"),
    ],
)
def test_pfm_errors_name_the_field(tmp_path, content, field):
    path = tmp_path / "bad.pfm"
    path.write_bytes(content)
    with pytest.raises(FormatError) as error:
        read_pfm(path)
    assert error.value.field == field
    assert str(path) in str(error.value)


def test_pfm_rejects_unsupported_shapes(tmp_path):
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))


def test_poses_round_trip_bit_exact(tmp_path):
    poses = random_poses(np.random.default_rng(1), 4)
    path = tmp_path / "poses.txt"
    write_poses(path, poses)
    loaded = read_poses(path)
    assert len(loaded) == 4
    for a, b in zip(poses, loaded):
        np.testing.assert_array_equal(a.matrix(), b.matrix())


@pytest.mark.parametrize(
    "line, message",
    [("1 2 3\n", "expected 12 numbers"), ("1 " * 11 + "x\n", "non-numeric"), ("1 " * 11 + "nan\n", "non-finite")],
)
def test_poses_errors(tmp_path, line, message):
    path = tmp_path / "poses.txt"
    path.write_text(line)
    with pytest.raises(FormatError) as error:
        read_poses(path)
    assert error.value.field == "line 1"
    assert message in str(error.value)


@pytest.mark.parametrize("binary", [False, True])
def test_ply_round_trip(tmp_path, binary):
    rng = np.random.default_rng(2)
    points = rng.normal(size=(10, 3))
    colors = rng.integers(0, 256, size=(10, 3)).astype(np.uint8)
    path = tmp_path / "cloud.ply"
    write_ply(path, points, colors, binary=binary)
    loaded_points, loaded_colors = read_ply(path)
    np.testing.assert_allclose(loaded_points, points, rtol=1e-7)
    np.testing.assert_array_equal(loaded_colors, colors)


def test_ply_header_names_vertex_properties(tmp_path):
    path = tmp_path / "cloud.ply"
    write_ply(path, np.zeros((3, 3)), np.full((3, 3), 200, dtype=np.uint8))
    text = path.read_text()
    header = text[: text.index("end_header")]
    assert "format ascii 1.0" in header
    assert "element vertex 3" in header
    for name in ("x", "y", "z", "red", "green", "blue"):
        assert f" {name}\n" in header


def test_ply_errors(tmp_path):
    path = tmp_path / "bad.ply"
    with pytest.raises(FormatError):
        read_ply(path)
    path.write_bytes(b"obj\n")
    with pytest.raises(FormatError):
        read_ply(path)
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\n")
    with pytest.raises(FormatError):
        read_ply(path)
    with pytest.raises(ValueError):
        write_ply(path, np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ZeroValidPixelsError):
        write_ply(path, np.zeros((0, 3)), np.zeros((0, 3)))


def test_export_pointcloud(tmp_path):
    K = Intrinsics.default(4, 6)
    surface = pinhole_template(4, 6, K)
    depth = np.full((4, 6), 2.0)
    depth[0, 1] = 0.0
    depth[3, 5] = np.inf
    mask = np.ones((4, 6), dtype=bool)
    mask[2, 2] = False
    image = ImageGrid.constant(4, 6, 0.5, channels=3)

    path = tmp_path / "cloud.ply"
    count = export_pointcloud(ImageGrid.from_numpy(depth), surface, image, path, mask=mask)
    assert count == 24 - 3
    points, colors = read_ply(path)
    assert len(points) == count
    np.testing.assert_allclose(np.linalg.norm(points, axis=1), 2.0, rtol=1e-6)
    assert (colors == 128).all()

    with pytest.raises(ZeroValidPixelsError):
        export_pointcloud(ImageGrid.from_numpy(depth), surface, image, path, mask=np.zeros((4, 6), dtype=bool))


def test_parse_and_format_values():
    assert parse_value("true") is True
    assert parse_value("None") is None
    assert parse_value("41") == 41
    assert parse_value("2e-4") == 2e-4
    assert parse_value("geometric") == "geometric"
    for value in (True, None, 7, 0.1, "linear"):
        assert parse_value(format_value(value)) == value


def test_read_config_nests_dotted_keys(tmp_path):
    path = tmp_path / "fit.cfg"
    path.write_text("# comment\nlr = 0.02  # inline\npatch.h = 9\npatch.w = 7\n\nautomask = false\n")
    assert read_config(path) == {"lr": 0.02, "patch": {"h": 9, "w": 7}, "automask": False}


@pytest.mark.parametrize(
    "content, field",
    [("lr 0.1\n", "line 1"), ("lr =\n", "line 1"), ("lr = 1\nlr = 2\n", "lr"), ("a = 1\na.b = 2\n", "a.b")],
)
def test_read_config_errors(tmp_path, content, field):
    path = tmp_path / "bad.cfg"
    path.write_text(content)
    with pytest.raises(FormatError) as error:
        read_config(path)
    assert error.value.field == field


def test_write_config_round_trip(tmp_path):
    config = FitConfig(epochs=3, lr=0.05, init_depth=1.5).to_dict()
    path = tmp_path / "fit.cfg"
    write_config(path, config)
    assert read_config(path) == config
    assert load_fit_config(path) == FitConfig(epochs=3, lr=0.05, init_depth=1.5)


def test_load_fit_config_rejects_unknown_keys_and_bad_values(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("learning_rate = 0.1\n")
    with pytest.raises(FormatError) as error:
        load_fit_config(path)
    assert "learning_rate" in str(error.value)

    path.write_text("patch.h = 4\n")
    with pytest.raises(FormatError):
        load_fit_config(path)

    path.write_text("patch = 5\n")
    with pytest.raises(FormatError) as error:
        load_fit_config(path)
    assert "section" in str(error.value)


@pytest.mark.parametrize("name", ["fit.cfg", "fit-fast.cfg"])
def test_shipped_configs_load(name):
    config = load_fit_config(os.path.join(CONFIGS, name))
    assert isinstance(config, FitConfig)


def test_default_config_file_lists_the_defaults():
    assert load_fit_config(os.path.join(CONFIGS, "fit.cfg")) == FitConfig()


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    written = small_dataset(tmp_path, rng)
    manifest, frames, depths, poses, surface, mask = read_dataset(tmp_path)

    assert manifest.frames == written.frames == ["000000", "000001", "000002"]
    assert manifest.extra == {"preset": "unit-test"}
    assert manifest.camera == {"kind": "pinhole", "fx": 2.5}
    assert len(frames) == len(depths) == len(poses) == 3
    assert frames[0].shape == (4, 5, 3) and depths[0].shape == (4, 5)
    assert mask.dtype == bool and not mask[0, 0] and mask.sum() == 19
    assert os.path.isfile(manifest.frame_png(1))

    rays = pinhole_template(4, 5, Intrinsics.default(4, 5)).rays.numpy()
    np.testing.assert_array_equal(surface, quantize_surface(rays))
    np.testing.assert_allclose(np.linalg.norm(surface, axis=-1), 1.0, atol=1e-15)


def test_manifest_errors(tmp_path):
    with pytest.raises(FormatError) as error:
        Manifest.load(tmp_path)
    assert error.value.field == "manifest"

    small_dataset(tmp_path, np.random.default_rng(4))
    path = tmp_path / MANIFEST_FILE
    content = json.loads(path.read_text())

    path.write_text("{not json")
    with pytest.raises(FormatError):
        Manifest.load(tmp_path)

    for key, value, field in (("version", 2, "version"), ("frames", ["000000", "000001"], "frames")):
        broken = dict(content, **{key: value})
        path.write_text(json.dumps(broken))
        with pytest.raises(FormatError) as error:
            Manifest.load(tmp_path)
        assert error.value.field == field

    path.write_text(json.dumps({k: v for k, v in content.items() if k != "camera"}))
    with pytest.raises(FormatError) as error:
        Manifest.load(tmp_path)
    assert error.value.field == "camera"

    path.write_text(json.dumps(content))
    os.remove(tmp_path / "depths" / "000001.pfm")
    with pytest.raises(FormatError) as error:
        Manifest.load(tmp_path)
    assert error.value.field == "file"


def test_read_dataset_checks_sizes(tmp_path):
    small_dataset(tmp_path, np.random.default_rng(5))
    write_pfm(tmp_path / "depths" / "000002.pfm", np.ones((3, 5), dtype=np.float32))
    with pytest.raises(FormatError) as error:
        read_dataset(tmp_path)
    assert error.value.field == "dimensions"
