"""Named configurations and the model-description file format.

Preset names follow the published variant table: ``TY:<classes>-<kernel>-<resolution>``
with classes in {3, 10, 20}, kernel in {3, 7} and resolution in {88, 112, 224}.
Any name matching the pattern with a valid kernel and resolution is accepted,
so the family extends beyond the published grid.
"""
from __future__ import annotations

import json
import re

from .errors import ConfigError
from .graph import DEFAULT_BACKBONE, DEFAULT_POOL_AFTER, NetworkConfig

_PRESET_RE = re.compile(r"^TY:(\d+)-(\d+)-(\d+)$")

PRESET_CLASSES = (3, 10, 20)
PRESET_KERNELS = (3, 7)
PRESET_RESOLUTIONS = (88, 112, 224)

PRESET_NAMES = tuple(
    f"TY:{c}-{k}-{r}" for c in PRESET_CLASSES for k in PRESET_KERNELS for r in PRESET_RESOLUTIONS
)


def parse_preset(name: str) -> NetworkConfig:
    m = _PRESET_RE.match(name.strip())
    if not m:
        raise ConfigError(f"unknown preset {name!r}; expected TY:<classes>-<kernel>-<resolution>")
    classes, kernel, resolution = (int(g) for g in m.groups())
    return NetworkConfig(resolution=resolution, classes=classes, first_kernel=kernel)


def preset_name(config: NetworkConfig) -> str | None:
    """Inverse of parse_preset for default-backbone configs, else None."""
    if (
        config.backbone_channels == DEFAULT_BACKBONE
        and config.pool_after == DEFAULT_POOL_AFTER
        and config.in_channels == 3
        and config.boxes == 2
        and config.grid == 4
    ):
        return f"TY:{config.classes}-{config.first_kernel}-{config.resolution}"
    return None


def config_to_dict(config: NetworkConfig) -> dict:
    return {
        "resolution": config.resolution,
        "classes": config.classes,
        "first_kernel": config.first_kernel,
        "boxes": config.boxes,
        "grid": config.grid,
        "backbone_channels": list(config.backbone_channels),
        "pool_after": list(config.pool_after),
        "in_channels": config.in_channels,
    }


def config_from_dict(data: dict) -> NetworkConfig:
    try:
        return NetworkConfig(
            resolution=int(data["resolution"]),
            classes=int(data["classes"]),
            first_kernel=int(data.get("first_kernel", 3)),
            boxes=int(data.get("boxes", 2)),
            grid=int(data.get("grid", 4)),
            backbone_channels=tuple(data.get("backbone_channels", DEFAULT_BACKBONE)),
            pool_after=tuple(data.get("pool_after", DEFAULT_POOL_AFTER)),
            in_channels=int(data.get("in_channels", 3)),
        )
    except KeyError as exc:
        raise ConfigError(f"model description missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model description: {exc}") from exc


def save_config(path: str, config: NetworkConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str) -> NetworkConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model description {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"model description {path} is not a JSON object")
    return config_from_dict(data)
