# import presets module so the named scenarios are available
import ray_surface.scenarios  # noqa: F401
