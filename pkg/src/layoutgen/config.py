"""Run configuration file: one JSON document carrying the training, network,
embedder, and loss-weight settings. Loading merges the file over defaults, so
any deviation from the published weights is explicit in the file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .conditioning import EmbedderConfig
from .errors import ConfigurationError
from .losses import LossWeights
from .networks import NetworkConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def to_dict(self) -> dict:
        return {
            "train": asdict(self.train),
            "network": asdict(self.network),
            "embedder": asdict(self.embedder),
            "loss_weights": asdict(self.loss_weights),
        }


_SECTIONS = {
    "train": TrainConfig,
    "network": NetworkConfig,
    "embedder": EmbedderConfig,
    "loss_weights": LossWeights,
}


def run_config_from_dict(payload: dict) -> RunConfig:
    kwargs = {}
    for section, cls in _SECTIONS.items():
        raw = payload.get(section, {})
        if not isinstance(raw, dict):
            raise ConfigurationError(f"section {section!r} must be an object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown keys in {section!r}: {sorted(unknown)}")
        try:
            kwargs[section] = cls(**raw)
        except TypeError as err:
            raise ConfigurationError(f"bad section {section!r}: {err}") from None
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigurationError(f"cannot read run config {path}: {err}") from None
    return run_config_from_dict(payload)


def save_run_config(config: RunConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
