"""Run configuration: one JSON file is the canonical input, flags override."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..errors import ConfigurationError
from ..perturbation import PerturbationConfig

_KNOWN_KEYS = {
    "dataset", "dataset_format", "output_dir",
    "model", "model_checkpoint", "grayscale",
    "generator", "generator_checkpoint",
    "oracle", "oracle_checkpoint",
    "perturbation", "fgsm_epsilon", "sparse_mask",
    "export_images", "max_samples", "adapter_options",
}


@dataclass
class RunConfig:
    """Everything an evaluation run needs, resolvable before any sample runs."""

    dataset: str = ""
    output_dir: str = ""
    dataset_format: str = "class-dirs"  # or "index"
    model: str = "toy-convnet"
    model_checkpoint: str | None = None
    grayscale: bool = False
    generator: str = "reference-ae"
    generator_checkpoint: str | None = None
    oracle: str = "surrogate"
    oracle_checkpoint: str | None = None
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    fgsm_epsilon: float | None = None
    sparse_mask: str | None = None
    export_images: bool = False
    max_samples: int | None = None
    adapter_options: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.dataset:
            raise ConfigurationError("config: dataset path is required")
        if not Path(self.dataset).exists():
            raise ConfigurationError(f"config: dataset path not found: {self.dataset}")
        if not self.output_dir:
            raise ConfigurationError("config: output_dir is required")
        if self.dataset_format not in ("class-dirs", "index"):
            raise ConfigurationError(
                f"config: unknown dataset_format {self.dataset_format!r}"
            )
        if self.fgsm_epsilon is not None and not (self.fgsm_epsilon > 0):
            raise ConfigurationError("config: fgsm_epsilon must be > 0")
        if self.max_samples is not None and self.max_samples < 1:
            raise ConfigurationError("config: max_samples must be >= 1")
        for key in ("model_checkpoint", "generator_checkpoint",
                    "oracle_checkpoint", "sparse_mask"):
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise ConfigurationError(f"config: {key} not found: {value}")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            d[f.name] = value.to_dict() if f.name == "perturbation" else value
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        unknown = set(d) - _KNOWN_KEYS
        if unknown:
            raise ConfigurationError(
                f"config: unknown keys {sorted(unknown)}"
            )
        kwargs = dict(d)
        if "perturbation" in kwargs:
            kwargs["perturbation"] = PerturbationConfig.from_dict(
                kwargs["perturbation"]
            )
        try:
            return RunConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"config: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return RunConfig.from_dict(payload)


def apply_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Return a copy of config with non-None override values applied.

    Perturbation-level overrides use the keys budget, step_size, and seed.
    """
    d = config.to_dict()
    pert = d["perturbation"]
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("budget", "step_size", "seed"):
            pert[key] = value
        elif key in _KNOWN_KEYS:
            d[key] = value
        else:
            raise ConfigurationError(f"config: unknown override {key!r}")
    return RunConfig.from_dict(d)
