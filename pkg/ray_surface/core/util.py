from typing import Dict

import numpy as np
import torch


def deep_dict_merge(defaults: Dict, overrides: Dict) -> Dict:
    """Overlay `overrides` onto `defaults` in place and return `defaults`.

    Nested sections such as `patch`, `weights` or a scenario's `scene` are
    merged field by field, so an override only names the fields it changes.
    Replacing a whole section with a plain value is rejected.
    """
    for key, value in overrides.items():
        current = defaults.get(key)
        if isinstance(value, dict):
            section = defaults.setdefault(key, {})
            if not isinstance(section, dict):
                raise ValueError(f"'{key}' is a single value, not a section")
            deep_dict_merge(section, value)
        elif isinstance(current, dict):
            raise ValueError(f"'{key}' is a section; set its fields instead")
        else:
            defaults[key] = value

    return defaults


def check_keys(config: Dict, defaults: Dict, prefix: str = "") -> None:
    """Reject keys of `config` that have no counterpart in `defaults`."""
    for key, value in config.items():
        name = f"{prefix}{key}"
        if key not in defaults:
            raise ValueError(f"unknown configuration key '{name}'")
        if isinstance(value, dict) and isinstance(defaults[key], dict):
            check_keys(value, defaults[key], prefix=f"{name}.")


def seed_everything(seed: int) -> np.random.Generator:
    """Seed torch and return a numpy generator derived from the same seed."""
    torch.manual_seed(seed)
    return np.random.default_rng(seed)
