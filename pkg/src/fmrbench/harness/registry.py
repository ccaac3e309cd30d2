"""Named adapter registry.

Models, generators, and oracles are looked up by short registered names
so configs stay declarative. Bundled names resolve to frozen checkpoints
shipped with the package; the *-external names load a user-supplied
module via adapter_options.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import AdapterError, ConfigurationError
from ..fixtures import DEFAULT_CHECKPOINTS
from ..generators import ExternalGenerator, LinearAutoencoderGenerator
from ..models import grayscale_wrap, load_model
from ..oracles import ExternalOracle, LabelSet, SurrogateOracle

MODEL_NAMES = ("toy-mlp", "toy-convnet", "toy-mlp-pgd")
GENERATOR_NAMES = ("reference-ae", "vqgan-external")
ORACLE_NAMES = ("surrogate", "clip-external")


def _checkpoint_path(name: str, override: str | None) -> Path:
    if override is not None:
        return Path(override)
    path = DEFAULT_CHECKPOINTS.get(name)
    if path is None or not path.exists():
        raise ConfigurationError(
            f"no bundled checkpoint for {name!r}; pass an explicit checkpoint path"
        )
    return path


def build_model(name: str, checkpoint: str | None = None, grayscale: bool = False):
    if name not in MODEL_NAMES:
        raise ConfigurationError(
            f"unknown model {name!r}; registered: {', '.join(MODEL_NAMES)}"
        )
    path = _checkpoint_path(name, checkpoint)
    model = load_model(path)
    if grayscale:
        model = grayscale_wrap(model)
    return model


def build_generator(name: str, checkpoint: str | None = None,
                    adapter_options: dict | None = None):
    if name == "reference-ae":
        path = _checkpoint_path("reference-ae", checkpoint)
        try:
            return LinearAutoencoderGenerator.load(path)
        except (OSError, ValueError, KeyError) as exc:
            raise AdapterError(f"cannot load generator checkpoint {path}: {exc}") from exc
    if name == "vqgan-external":
        options = (adapter_options or {}).get("generator")
        if not options:
            raise ConfigurationError(
                "vqgan-external requires adapter_options.generator with a 'module' key"
            )
        return ExternalGenerator.build(options)
    raise ConfigurationError(
        f"unknown generator {name!r}; registered: {', '.join(GENERATOR_NAMES)}"
    )


def build_oracle(name: str, label_set: LabelSet, checkpoint: str | None = None,
                 adapter_options: dict | None = None):
    if name == "surrogate":
        path = _checkpoint_path("surrogate", checkpoint)
        try:
            model = load_model(path)
        except AdapterError:
            raise
        except (OSError, ValueError, KeyError) as exc:
            raise AdapterError(f"cannot load oracle checkpoint {path}: {exc}") from exc
        return SurrogateOracle(classifier=model, label_set=label_set)
    if name == "clip-external":
        options = (adapter_options or {}).get("oracle")
        if not options:
            raise ConfigurationError(
                "clip-external requires adapter_options.oracle with a 'module' key"
            )
        return ExternalOracle.build(options, label_set)
    raise ConfigurationError(
        f"unknown oracle {name!r}; registered: {', '.join(ORACLE_NAMES)}"
    )
