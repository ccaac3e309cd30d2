"""Robustness metrics: SA, PA, VR, and FMR with per-class breakdowns.

SA is clean top-1 accuracy. PA is top-1 accuracy restricted to samples for
which generation actually produced a perturbed image. VR is the fraction of
samples that were perturbed at all. FMR normalizes PA by SA. Diagnostic
aborts are excluded from PA on both sides and from the VR denominator.

All four are percentages in [0, 100]. Presentation values are rounded to two
decimals (round-half-even on the underlying binary doubles); raw doubles are
kept alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, UndefinedMetricError
from .perturbation import (
    DIAGNOSTIC_ABORT,
    ORIGINAL_KEPT,
    PERTURBED,
    LabeledSample,
    PerturbationOutcome,
)


def round2(x: float) -> float:
    """Two-decimal presentation rounding (half-even)."""
    return round(float(x), 2)


def fmr(pa: float, sa: float) -> float:
    """Foundation-model-oriented robustness: 100 * PA / SA, two decimals.

    Raises UndefinedMetricError when SA is 0 (or negative, which is already a
    contract violation upstream).
    """
    if sa <= 0:
        raise UndefinedMetricError("FMR undefined: SA must be > 0")
    return round2(100.0 * pa / sa)


def fmr_raw(pa: float, sa: float) -> float:
    """Unrounded 100 * PA / SA."""
    if sa <= 0:
        raise UndefinedMetricError("FMR undefined: SA must be > 0")
    return 100.0 * pa / sa


def standard_accuracy(model, dataset: Sequence[LabeledSample]) -> float:
    """Top-1 accuracy of the model on clean samples, as a percentage."""
    if len(dataset) == 0:
        raise ConfigurationError("standard_accuracy: empty dataset")
    correct = sum(
        1
        for s in dataset
        if int(np.argmax(model.predict(s.image))) == s.label
    )
    return 100.0 * correct / len(dataset)


def perturbed_accuracy(
    model, outcomes: Sequence[PerturbationOutcome]
) -> float | None:
    """Top-1 accuracy over final images of PERTURBED outcomes only.

    Returns None (an explicit undefined marker, never 0) when no outcome has
    status PERTURBED.
    """
    perturbed = [o for o in outcomes if o.status == PERTURBED]
    if not perturbed:
        return None
    correct = sum(
        1
        for o in perturbed
        if int(np.argmax(model.predict(o.final_image))) == o.label
    )
    return 100.0 * correct / len(perturbed)


def validation_rate(outcomes: Sequence[PerturbationOutcome]) -> float:
    """Percentage of outcomes with status PERTURBED.

    Diagnostic aborts are excluded from the denominator. An all-abort run has
    an empty denominator and a VR of 0.
    """
    valid = [o for o in outcomes if o.status != DIAGNOSTIC_ABORT]
    if not valid:
        return 0.0
    perturbed = sum(1 for o in valid if o.status == PERTURBED)
    return 100.0 * perturbed / len(valid)


@dataclass
class EvaluationReport:
    """Aggregated metrics for one evaluation run.

    Raw doubles live in the top-level fields; the `rounded` block carries the
    two-decimal presentation. perturbed_accuracy and fmr are None when no
    sample was perturbed (and fmr also when SA is 0).
    """

    standard_accuracy: float
    perturbed_accuracy: float | None
    validation_rate: float
    fmr: float | None
    per_class: dict[str, dict] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    config_fingerprint: str = ""

    @property
    def rounded(self) -> dict:
        def r(v):
            return None if v is None else round2(v)

        return {
            "standard_accuracy": r(self.standard_accuracy),
            "perturbed_accuracy": r(self.perturbed_accuracy),
            "validation_rate": r(self.validation_rate),
            "fmr": r(self.fmr),
        }

    def to_dict(self) -> dict:
        return {
            "schema": "fmrbench/evaluation-report/v1",
            "standard_accuracy": self.standard_accuracy,
            "perturbed_accuracy": self.perturbed_accuracy,
            "validation_rate": self.validation_rate,
            "fmr": self.fmr,
            "rounded": self.rounded,
            "per_class": self.per_class,
            "counts": self.counts,
            "config_fingerprint": self.config_fingerprint,
        }

    @staticmethod
    def from_dict(d: dict) -> "EvaluationReport":
        return EvaluationReport(
            standard_accuracy=d["standard_accuracy"],
            perturbed_accuracy=d["perturbed_accuracy"],
            validation_rate=d["validation_rate"],
            fmr=d["fmr"],
            per_class=d.get("per_class", {}),
            counts=d.get("counts", {}),
            config_fingerprint=d.get("config_fingerprint", ""),
        )


def build_report(
    rows: Sequence[dict],
    class_names: Sequence[str] | None = None,
    config_fingerprint: str = "",
) -> EvaluationReport:
    """Aggregate per-sample rows into an EvaluationReport.

    Each row is a dict with keys: label (int), class_name (str), status,
    prediction_original (int), prediction_final (int). This single builder
    backs both the in-memory path and recomputation from persisted records,
    so the two agree bit-exactly by construction.
    """
    if not rows:
        raise ConfigurationError("build_report: no rows")

    total = len(rows)
    aborts = [r for r in rows if r["status"] == DIAGNOSTIC_ABORT]
    valid = [r for r in rows if r["status"] != DIAGNOSTIC_ABORT]
    perturbed = [r for r in valid if r["status"] == PERTURBED]

    correct_orig = sum(
        1 for r in rows if r["prediction_original"] == r["label"]
    )
    sa = 100.0 * correct_orig / total
    correct_pert = sum(1 for r in perturbed if r["prediction_final"] == r["label"])
    pa = 100.0 * correct_pert / len(perturbed) if perturbed else None
    vr = 100.0 * len(perturbed) / len(valid) if valid else 0.0
    overall_fmr = fmr_raw(pa, sa) if (pa is not None and sa > 0) else None

    per_class: dict[str, dict] = {}
    labels_seen = sorted({r["label"] for r in rows})
    for label in labels_seen:
        c_rows = [r for r in rows if r["label"] == label]
        name = c_rows[0].get("class_name") or (
            class_names[label] if class_names else str(label)
        )
        c_valid = [r for r in c_rows if r["status"] != DIAGNOSTIC_ABORT]
        c_pert = [r for r in c_valid if r["status"] == PERTURBED]
        c_sa = (
            100.0
            * sum(1 for r in c_rows if r["prediction_original"] == r["label"])
            / len(c_rows)
        )
        c_pa = (
            100.0
            * sum(1 for r in c_pert if r["prediction_final"] == r["label"])
            / len(c_pert)
            if c_pert
            else None
        )
        c_vr = 100.0 * len(c_pert) / len(c_valid) if c_valid else 0.0
        c_fmr = fmr_raw(c_pa, c_sa) if (c_pa is not None and c_sa > 0) else None
        per_class[name] = {
            "label": label,
            "count": len(c_rows),
            "sa": c_sa,
            "pa": c_pa,
            "vr": c_vr,
            "fmr": c_fmr,
        }

    counts = {
        "total": total,
        "perturbed": len(perturbed),
        "original_kept": sum(1 for r in valid if r["status"] == ORIGINAL_KEPT),
        "diagnostic_aborts": len(aborts),
        "correct_original": correct_orig,
        "correct_perturbed": correct_pert,
    }
    return EvaluationReport(
        standard_accuracy=sa,
        perturbed_accuracy=pa,
        validation_rate=vr,
        fmr=overall_fmr,
        per_class=per_class,
        counts=counts,
        config_fingerprint=config_fingerprint,
    )


def compute_report(
    model,
    dataset: Sequence[LabeledSample],
    outcomes: Sequence[PerturbationOutcome],
    class_names: Sequence[str] | None = None,
    config_fingerprint: str = "",
) -> EvaluationReport:
    """Build a report by predicting on original and final images."""
    if len(dataset) != len(outcomes):
        raise ConfigurationError("dataset/outcomes length mismatch")
    rows = []
    for sample, outcome in zip(dataset, outcomes):
        rows.append(
            {
                "label": sample.label,
                "class_name": (
                    class_names[sample.label] if class_names else str(sample.label)
                ),
                "status": outcome.status,
                "prediction_original": int(np.argmax(model.predict(sample.image))),
                "prediction_final": int(np.argmax(model.predict(outcome.final_image))),
            }
        )
    return build_report(
        rows, class_names=class_names, config_fingerprint=config_fingerprint
    )
