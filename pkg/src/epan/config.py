"""Run configuration: one JSON file with ``model``, ``train`` and ``canny`` sections.

Precedence is command-line flag, then file, then built-in default. A single
top-level ``seed`` drives model initialisation, augmentation and any random
dataset choices.

Example file::

    {"seed": 0,
     "model": {"variant": "epan", "cdn_base_channels": 16},
     "train": {"epochs": 100, "crop_h": 64, "crop_w": 64},
     "canny": {"gaussian_sigma": 1.4}}
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .edges import CannyParams
from .exceptions import ConfigurationError, ParameterError
from .losses import LossWeights
from .model import ModelConfig
from .trainer import TrainConfig

SECTIONS = ("model", "train", "canny")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    canny: CannyParams = field(default_factory=CannyParams)
    seed: int = 0

    def __post_init__(self):
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", dataclasses.replace(self.train, seed=self.seed))

    def validate(self) -> None:
        """Cross-section checks that no single section can make alone."""
        self.train.check_model(self.model)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "canny": dataclasses.asdict(self.canny),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunConfig:
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigurationError(f"unknown run config keys: {sorted(unknown)}")
        try:
            canny = CannyParams(**d.get("canny", {}))
        except TypeError as exc:
            raise ConfigurationError(f"bad canny section: {exc}") from exc
        except ParameterError as exc:
            raise ConfigurationError(str(exc)) from exc
        train = dict(d.get("train", {}))
        seed = int(d.get("seed", train.get("seed", 0)))
        return cls(ModelConfig.from_dict(d.get("model", {})), TrainConfig.from_dict(train), canny, seed)


def _set(section: dict, key: str, value) -> None:
    if value is not None:
        section[key] = value


def load_run_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read ``path`` (if given) and apply flat ``overrides`` of the form ``section.key``.

    ``None`` override values are ignored so argparse defaults can be passed
    straight through.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
    merged: dict[str, Any] = {k: dict(raw.get(k, {})) for k in SECTIONS}
    if "seed" in raw:
        merged["seed"] = raw["seed"]
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "seed":
            merged["seed"] = value
            continue
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigurationError(f"bad override key {dotted!r}")
        if section == "train" and key in ("lambda_c", "lambda_e"):
            weights = dict(merged["train"].get("weights", dataclasses.asdict(LossWeights())))
            weights[key] = value
            merged["train"]["weights"] = weights
        else:
            _set(merged[section], key, value)
    cfg = RunConfig.from_dict(merged)
    cfg.validate()
    return cfg


__all__ = ["RunConfig", "load_run_config"]
