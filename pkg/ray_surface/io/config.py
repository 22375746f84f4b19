"""Flat `key = value` configuration files.

Dotted keys address nested sections (`patch.h = 41`) and `#` starts a
comment. Values are read as bool, none, int, float or plain string.
"""
from typing import Dict

from ray_surface.core.fit import FitConfig
from ray_surface.io.errors import FormatError


def parse_value(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def read_config(path) -> Dict:
    config: Dict = {}
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(path, f"line {number}", "expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise FormatError(path, f"line {number}", "empty key or value")
            if key in seen:
                raise FormatError(path, key, f"duplicate key on line {number}")
            seen.add(key)

            *sections, name = key.split(".")
            node = config
            for section in sections:
                node = node.setdefault(section, {})
                if not isinstance(node, dict):
                    raise FormatError(path, key, f"'{section}' is not a section")
            node[name] = parse_value(value)
    return config


def flatten(config: Dict, prefix: str = "") -> Dict:
    flat = {}
    for key, value in config.items():
        if isinstance(value, dict):
            flat.update(flatten(value, prefix=f"{prefix}{key}."))
        else:
            flat[f"{prefix}{key}"] = value
    return flat


def write_config(path, config: Dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in flatten(config).items():
            f.write(f"{key} = {format_value(value)}\n")


def load_fit_config(path) -> FitConfig:
    """Read a config file into a FitConfig; unknown keys and bad values name the file."""
    overrides = read_config(path)
    try:
        return FitConfig.from_dict(overrides)
    except (TypeError, ValueError) as error:
        raise FormatError(path, "config", str(error))
