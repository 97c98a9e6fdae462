"""RunConfig: the JSON document driving ``sttr train``, ``eval`` and ``export-attention``."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .networks import STREAM_KINDS, NetworkConfig
from .training import TrainConfig

_INT = {"type": "integer"}
_POS = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "sttr run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["data", "streams"],
    "properties": {
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "channels": {"type": "array", "items": _POS, "minItems": 1},
                "in_channels": _POS,
                "num_classes": _POS,
                "topology": {"oneOf": [{"type": "string"}, {"type": "object"}]},
                "T": {"oneOf": [_POS, {"type": "null"}]},
                "feature_layers": {"type": "integer", "minimum": 0},
                "input_bn": {"type": "boolean"},
                "partition": {"enum": ["uniform", "distance", "spatial"]},
                "kernel_size": _POS,
                "heads": _POS,
                "qk_ratio": {"type": "number", "exclusiveMinimum": 0},
                "value_ratio": {"type": "number", "exclusiveMinimum": 0},
                "drop_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "strides": {"oneOf": [{"type": "array", "items": _POS}, {"type": "null"}]},
                "d_blocks": {"oneOf": [{"type": "array", "items": {"oneOf": [_POS, {"type": "null"}]}},
                                       {"type": "null"}]},
                "channel_multiplier": _POS,
                "seed": _INT,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _POS,
                "batch_size": _POS,
                "base_lr": {"type": "number", "exclusiveMinimum": 0},
                "lr_drop_epochs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "momentum": {"type": "number", "minimum": 0, "maximum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
                "warmup": {"oneOf": [{"type": "boolean"}, {"type": "null"}]},
                "seed": _INT,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["manifest"],
            "properties": {
                "manifest": {"type": "string"},
                "test_manifest": {"type": "string"},
                "test_per_class": {"type": "integer", "minimum": 0},
                "split_seed": _INT,
                "T": _POS,
            },
        },
        "streams": {"type": "array", "minItems": 1, "items": {"enum": sorted(STREAM_KINDS)}},
        "bones": {"type": "boolean"},
        "capture": {"type": "boolean"},
    },
}


@dataclass
class RunConfig:
    network: NetworkConfig
    train: TrainConfig
    data: dict
    streams: list[str]
    bones: bool = False
    capture: bool = False
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict, repr=False)

    def path(self, key: str) -> Path | None:
        """Dataset path ``key`` resolved against the config file's directory."""
        value = self.data.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


def validate_run_config(doc: dict) -> None:
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ConfigError(f"run config invalid at {where}: {exc.message}") from None


def parse_run_config(doc: dict, base_dir: str | Path | None = None) -> RunConfig:
    """Validate ``doc`` against the schema and build the typed configuration.

    Unset ``network.in_channels`` follows the bones flag (3 or 6).
    ``network.num_classes`` left unset is filled in from the dataset later.
    """
    validate_run_config(doc)
    net = dict(doc.get("network", {}))
    bones = bool(doc.get("bones", False))
    net.setdefault("in_channels", 6 if bones else 3)
    network = NetworkConfig.from_dict(net)
    train = TrainConfig.from_dict(dict(doc.get("train", {})))
    return RunConfig(network, train, dict(doc["data"]), list(doc["streams"]), bones,
                     bool(doc.get("capture", False)), Path(base_dir) if base_dir else Path.cwd(), doc)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return parse_run_config(doc, path.parent)
