# expose the named presets as ray_surface.scenarios.make
from ray_surface.scenarios.registry import REGISTRY, make  # noqa: F401
