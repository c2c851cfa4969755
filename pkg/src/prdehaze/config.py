"""JSON run configuration: defaults, validation and the resolved echo."""

import json
from dataclasses import asdict, fields
from pathlib import Path

from prdehaze.losses import LossWeights
from prdehaze.model import ModelConfig
from prdehaze.training import TrainConfig

DEFAULTS = {
    "data": {
        "root": "data",
        "beta_range": [0.4, 1.6],
        "A_range": [0.7, 1.0],
        "seed": 0,
        "counts": {"train": 200, "val": 20, "test": 20},
        "size": 64,
        "d_max": 5.0,
        "clean_dir": None,
    },
    "model": {k: v for k, v in asdict(ModelConfig()).items()},
    "loss": {**{k: v for k, v in asdict(LossWeights()).items()}, "adversarial_enabled": True},
    "train": {
        **{f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)
           if f.name not in ("weights", "adversarial")},
        "out_dir": "runs/default",
    },
    "eval": {"out_dir": "eval", "split": "test"},
}
RESOLVED = "config.resolved.json"


class ConfigError(ValueError):
    pass


def _plain(value):
    return json.loads(json.dumps(value))


def resolve(doc):
    """Merge ``doc`` over the defaults; unknown sections or keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    resolved = _plain(DEFAULTS)
    for section, values in doc.items():
        if section not in resolved:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key, value in values.items():
            if key not in resolved[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            if key == "counts":
                unknown = set(value) - {"train", "val", "test"}
                if unknown:
                    raise ConfigError(f"unknown split(s) in data.counts: {sorted(unknown)}")
                resolved[section][key] = {**resolved[section][key], **value}
            else:
                resolved[section][key] = value
    try:
        model_config(resolved)
        train_config(resolved)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return resolved


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return resolve(doc)


def model_config(resolved):
    return ModelConfig(**resolved["model"])


def train_config(resolved):
    loss = dict(resolved["loss"])
    adversarial = loss.pop("adversarial_enabled")
    train = {k: v for k, v in resolved["train"].items() if k != "out_dir"}
    return TrainConfig(**train, adversarial=adversarial, weights=LossWeights(**loss))


def write_resolved(resolved, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / RESOLVED).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
