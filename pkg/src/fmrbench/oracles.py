"""Zero-shot oracle contract: does a perturbed image still show its label?

The oracle classifies an image over the full label set and accepts it when
the top-scoring class equals the queried label. Ties break toward the lowest
class index. The desk-scale surrogate is an independently trained classifier
that is stronger than the models under evaluation; CLIP-style adapters plug
in through the same image-in/scores-out contract and build their text side
from the prompt template below.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import AdapterError, ConfigurationError, ContractViolationError

PROMPT_TEMPLATE = "an image of {}"


@dataclass(frozen=True)
class LabelSet:
    """Ordered class names; index in the tuple is the stable class index."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.names:
            raise ConfigurationError("label set must be non-empty")
        if any(not n for n in self.names):
            raise ConfigurationError("class names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ConfigurationError("class names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Classification:
    """Zero-shot scores over the label set plus the argmax prediction."""

    predicted_class: int
    score_vector: np.ndarray


@dataclass(frozen=True)
class OracleVerdict:
    """A Classification judged against a queried label."""

    accepted: bool
    predicted_class: int
    score_vector: np.ndarray


def build_prompts(labels: LabelSet) -> list[str]:
    """One zero-shot prompt per class, in label order."""
    return [PROMPT_TEMPLATE.format(name) for name in labels.names]


def top_class(score_vector: np.ndarray) -> int:
    """Argmax with ties broken toward the lowest class index."""
    return int(np.argmax(score_vector))


@runtime_checkable
class OracleInterface(Protocol):
    """Contract every oracle adapter satisfies."""

    label_set: LabelSet

    def classify(self, image: np.ndarray) -> Classification: ...

    def verify(self, image: np.ndarray, label: int) -> bool: ...


class SurrogateOracle:
    """Desk-scale oracle: a stronger, independently trained classifier.

    Scores come straight from the classifier; verification is argmax equality
    with the queried label, exactly as a CLIP-style zero-shot check.
    """

    def __init__(self, classifier, label_set: LabelSet):
        if classifier.n_classes != len(label_set):
            raise ContractViolationError(
                "oracle classifier and label set disagree on class count"
            )
        self.classifier = classifier
        self.label_set = label_set
        self.prompts = build_prompts(label_set)

    def classify(self, image: np.ndarray) -> Classification:
        scores = np.asarray(self.classifier.predict(image), dtype=np.float64)
        return Classification(
            predicted_class=top_class(scores), score_vector=scores
        )

    def verify(self, image: np.ndarray, label: int) -> bool:
        if label < 0 or label >= len(self.label_set):
            raise ContractViolationError(f"label {label} outside label set")
        return self.classify(image).predicted_class == label

    def judge(self, image: np.ndarray, label: int) -> OracleVerdict:
        c = self.classify(image)
        return OracleVerdict(
            accepted=c.predicted_class == label,
            predicted_class=c.predicted_class,
            score_vector=c.score_vector,
        )


class ExternalOracle:
    """Adapter hook for an external zero-shot model (e.g. CLIP).

    Options must contain "module", an importable module exposing
    build_oracle(options, label_set) -> OracleInterface. The external side is
    expected to build its prompts with build_prompts/PROMPT_TEMPLATE.
    """

    @staticmethod
    def build(options: dict, label_set: LabelSet) -> OracleInterface:
        module_name = options.get("module")
        if not module_name:
            raise AdapterError("external oracle requires adapter option \"module\"")
        try:
            module = importlib.import_module(module_name)
            return module.build_oracle(options, label_set)
        except AdapterError:
            raise
        except Exception as exc:
            raise AdapterError(f"external oracle failed to load: {exc}") from exc
