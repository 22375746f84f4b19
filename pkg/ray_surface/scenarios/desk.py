from typing import Dict

from ray_surface.core.util import deep_dict_merge
from ray_surface.scenarios.cameras import camera_from_dict, default_camera
from ray_surface.scenarios.scene import Box, Plane, Scene, SineChecker, SmoothNoise
from ray_surface.scenarios.sequence import (
    TRAJECTORIES,
    SyntheticSequence,
    make_sequence,
    render_sequence,
)


def desk_scene(
    room=(1.2, 0.8, 1.2),
    desk: bool = True,
    poster: bool = True,
    wavelength: float = 0.9,
    seed: int = 0,
    background=(0.0, 0.0, 0.0),
) -> Scene:
    """A textured room around the origin, optionally with a desk and a wall poster.

    y points down, so the floor sits at y = room[1].
    """
    hx, hy, hz = room
    primitives = [Box((-hx, -hy, -hz), (hx, hy, hz), SmoothNoise(seed, min_wavelength=wavelength))]
    if desk:
        top = hy - 0.4
        primitives.append(
            Box(
                (-0.5 * hx, top, 0.45 * hz),
                (0.5 * hx, hy, 0.85 * hz),
                SineChecker(wavelength, axis_s=(1.0, 0.0, 0.0), axis_t=(0.0, 0.0, 1.0)),
            )
        )
    if poster:
        primitives.append(
            Plane(
                (0.3 * hx, -0.3 * hy, hz - 0.01),
                (0.0, 0.0, -1.0),
                SineChecker(
                    wavelength, color_a=(0.7, 0.2, 0.2), color_b=(0.95, 0.95, 0.85)
                ),
                extents=(0.25 * hx, 0.3 * hy),
            )
        )
    return Scene(primitives, background=background)


class DeskScenario:
    """Rendered desk-room sequence seen through one oracle camera kind."""

    camera_kind: str = None

    def __init__(self, config: Dict = {}):
        # set unspecified parameters to default configuration
        config = deep_dict_merge(self.default_config(), config)
        config = self.seeding(config)
        self.config = config

        self.height, self.width = config["height"], config["width"]
        camera = default_camera(self.camera_kind, self.height, self.width)
        if config["camera"]:
            camera = camera_from_dict({**camera.to_dict(), **config["camera"]})
        self.camera = camera

        self.scene = desk_scene(**config["scene"])
        if config["trajectory"] not in TRAJECTORIES:
            raise ValueError(
                f"unknown trajectory '{config['trajectory']}', expected one of {sorted(TRAJECTORIES)}"
            )
        self.poses = TRAJECTORIES[config["trajectory"]](
            config["frames"], **config["trajectory_params"]
        )

    @classmethod
    def default_config(cls) -> Dict:
        return {
            "height": 64,
            "width": 64,
            "frames": 3,
            "seed": 7,
            # overrides of the camera's default parameters
            "camera": {},
            "scene": {"room": (1.2, 0.8, 1.2), "desk": True, "poster": True, "wavelength": 0.9},
            "trajectory": "lateral",
            "trajectory_params": {"step": 0.05},
        }

    @classmethod
    def seeding(cls, config: Dict) -> Dict:
        """Return config with the scene seed derived from the scenario seed."""
        config["scene"]["seed"] = config["seed"] + 1
        return config

    def render(self) -> SyntheticSequence:
        return render_sequence(self.scene, self.camera, self.poses, self.height, self.width)

    def generate(self, root) -> SyntheticSequence:
        return make_sequence(
            self.scene,
            self.camera,
            self.poses,
            self.height,
            self.width,
            root,
            preset=self.name,
        )

    @property
    def name(self) -> str:
        return f"desk-{self.camera_kind}-v0"


class DeskPinhole(DeskScenario):
    camera_kind = "pinhole"


class DeskFisheye(DeskScenario):
    camera_kind = "fisheye"


class DeskCatadioptric(DeskScenario):
    camera_kind = "catadioptric"
