from typing import Dict

from ray_surface.scenarios.desk import DeskCatadioptric, DeskFisheye, DeskPinhole, DeskScenario

scenarios = {"pinhole": DeskPinhole, "fisheye": DeskFisheye, "catadioptric": DeskCatadioptric}

REGISTRY = {f"desk-{camera}-v0": scenario for camera, scenario in scenarios.items()}


def make(name: str, config: Dict = {}) -> DeskScenario:
    if name not in REGISTRY:
        raise ValueError(f"unknown preset '{name}', expected one of {sorted(REGISTRY)}")
    return REGISTRY[name](config)
