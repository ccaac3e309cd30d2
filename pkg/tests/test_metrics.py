"""Metric arithmetic: SA, PA, VR, FMR, and report aggregation."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmrbench import (
    DIAGNOSTIC_ABORT,
    ORIGINAL_KEPT,
    PERTURBED,
    ConfigurationError,
    EvaluationReport,
    PerturbationOutcome,
    UndefinedMetricError,
    build_report,
    compute_report,
    fmr,
    fmr_raw,
    perturbed_accuracy,
    round2,
    standard_accuracy,
    validation_rate,
)

from helpers import PixelLossModel, one_pixel_sample

# Published SA/PA pairs with the FMR value printed beside them; fmr must
# reproduce every row within +/-0.01 (one row rounds the other way at the
# second decimal, which the tolerance absorbs).
REFERENCE_FMR_ROWS = [
    (99.09, 27.78, 28.04),
    (95.38, 52.34, 54.88),
    (92.30, 27.95, 30.28),
    (76.26, 33.15, 43.47),
    (82.40, 41.65, 50.55),
    (78.57, 43.25, 55.05),
    (80.53, 48.52, 60.25),
    (79.88, 47.82, 59.87),
    (81.67, 56.95, 69.73),
    (82.05, 47.68, 58.11),
]


def outcome(status, label=0, pixel=0.0, sid="s"):
    return PerturbationOutcome(
        sample_id=sid,
        label=label,
        final_image=np.full((1, 1, 1), pixel, dtype=np.float64),
        status=status,
        accepted_iterations=1 if status == PERTURBED else 0,
        trace=[],
    )


class TestFmr:
    @pytest.mark.parametrize("sa,pa,expected", REFERENCE_FMR_ROWS)
    def test_reference_rows_within_tolerance(self, sa, pa, expected):
        assert abs(fmr(pa, sa) - expected) <= 0.01 + 1e-9

    def test_exact_examples(self):
        assert fmr(33.15, 76.26) == 43.47
        assert fmr(27.78, 99.09) == 28.04

    def test_pa_equal_sa_gives_100(self):
        assert fmr(76.26, 76.26) == 100.0

    def test_sa_zero_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            fmr(10.0, 0.0)
        with pytest.raises(UndefinedMetricError):
            fmr_raw(10.0, 0.0)

    @given(
        pa=st.floats(0.1, 100.0),
        sa=st.floats(0.1, 100.0),
        k=st.floats(0.01, 1000.0),
    )
    def test_scale_consistency(self, pa, sa, k):
        assert math.isclose(fmr_raw(k * pa, k * sa), fmr_raw(pa, sa), rel_tol=1e-9)

    def test_round2_is_half_even(self):
        # 0.625 and 0.875 are exact binary fractions, so the tie is real.
        assert round2(0.625) == 0.62
        assert round2(0.875) == 0.88


class TestStandardAccuracy:
    def test_all_correct(self):
        model = PixelLossModel(boundary=0.5)
        samples = [one_pixel_sample(0.9, 1), one_pixel_sample(0.1, 0)]
        assert standard_accuracy(model, samples) == 100.0

    def test_none_correct(self):
        model = PixelLossModel(boundary=0.5)
        samples = [one_pixel_sample(0.9, 0), one_pixel_sample(0.1, 1)]
        assert standard_accuracy(model, samples) == 0.0

    def test_three_of_four_correct(self):
        model = PixelLossModel(boundary=0.5)
        samples = [
            one_pixel_sample(0.8, 1, "a"),
            one_pixel_sample(0.9, 1, "b"),
            one_pixel_sample(0.2, 0, "c"),
            one_pixel_sample(0.3, 1, "d"),
        ]
        assert standard_accuracy(model, samples) == 75.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigurationError):
            standard_accuracy(PixelLossModel(), [])


class TestPerturbedAccuracy:
    def test_all_perturbed_still_correct(self):
        model = PixelLossModel(boundary=0.5)
        outcomes = [outcome(PERTURBED, label=1, pixel=0.9) for _ in range(4)]
        assert perturbed_accuracy(model, outcomes) == 100.0

    def test_all_original_kept_is_undefined_not_zero(self):
        model = PixelLossModel()
        outcomes = [outcome(ORIGINAL_KEPT) for _ in range(3)]
        assert perturbed_accuracy(model, outcomes) is None

    def test_two_of_five_flips_give_60(self):
        model = PixelLossModel(boundary=0.5)
        outcomes = [
            outcome(PERTURBED, label=1, pixel=0.9),
            outcome(PERTURBED, label=1, pixel=0.8),
            outcome(PERTURBED, label=1, pixel=0.7),
            outcome(PERTURBED, label=1, pixel=0.2),
            outcome(PERTURBED, label=1, pixel=0.1),
        ]
        assert perturbed_accuracy(model, outcomes) == 60.0

    def test_original_kept_excluded_from_denominator(self):
        model = PixelLossModel(boundary=0.5)
        outcomes = [
            outcome(PERTURBED, label=1, pixel=0.9),
            outcome(ORIGINAL_KEPT, label=1, pixel=0.1),
        ]
        assert perturbed_accuracy(model, outcomes) == 100.0


class TestValidationRate:
    def test_143_of_150_gives_9533(self):
        outcomes = [outcome(PERTURBED) for _ in range(143)]
        outcomes += [outcome(ORIGINAL_KEPT) for _ in range(7)]
        assert round2(validation_rate(outcomes)) == 95.33

    def test_1102_of_1350_gives_8163(self):
        outcomes = [outcome(PERTURBED) for _ in range(1102)]
        outcomes += [outcome(ORIGINAL_KEPT) for _ in range(248)]
        assert round2(validation_rate(outcomes)) == 81.63

    def test_all_perturbed_gives_100(self):
        assert validation_rate([outcome(PERTURBED)] * 5) == 100.0

    def test_all_original_kept_gives_0(self):
        assert validation_rate([outcome(ORIGINAL_KEPT)] * 5) == 0.0

    def test_diagnostic_aborts_excluded(self):
        outcomes = [
            outcome(PERTURBED),
            outcome(PERTURBED),
            outcome(ORIGINAL_KEPT),
            outcome(DIAGNOSTIC_ABORT),
        ]
        assert validation_rate(outcomes) == pytest.approx(100.0 * 2 / 3)


def random_rows(n, seed, n_classes=10):
    rng = np.random.default_rng(seed)
    statuses = [PERTURBED, ORIGINAL_KEPT, DIAGNOSTIC_ABORT]
    rows = []
    for i in range(n):
        label = int(rng.integers(n_classes))
        rows.append(
            {
                "label": label,
                "class_name": f"c{label}",
                "status": statuses[int(rng.integers(3))],
                "prediction_original": int(rng.integers(n_classes)),
                "prediction_final": int(rng.integers(n_classes)),
            }
        )
    return rows


class TestBuildReport:
    def test_no_rows_rejected(self):
        with pytest.raises(ConfigurationError):
            build_report([])

    def test_per_class_sa_aggregates_to_overall(self):
        rows = random_rows(500, seed=1)
        report = build_report(rows)
        weighted = sum(
            stats["sa"] * stats["count"] for stats in report.per_class.values()
        )
        total = sum(stats["count"] for stats in report.per_class.values())
        assert math.isclose(weighted / total, report.standard_accuracy, rel_tol=1e-9)

    def test_per_class_vr_aggregates_to_overall(self):
        rows = random_rows(500, seed=2)
        report = build_report(rows)
        valid = perturbed = 0
        for stats in report.per_class.values():
            # recover per-class valid counts from vr and perturbed counts
            c_rows = [r for r in rows if r["label"] == stats["label"]]
            c_valid = sum(1 for r in c_rows if r["status"] != DIAGNOSTIC_ABORT)
            valid += c_valid
            perturbed += round(stats["vr"] * c_valid / 100.0)
        assert math.isclose(
            100.0 * perturbed / valid, report.validation_rate, rel_tol=1e-9
        )

    def test_counts_are_consistent(self):
        rows = random_rows(300, seed=3)
        report = build_report(rows)
        c = report.counts
        assert c["total"] == 300
        assert (
            c["perturbed"] + c["original_kept"] + c["diagnostic_aborts"] == c["total"]
        )

    def test_fmr_field_matches_pa_over_sa(self):
        rows = random_rows(400, seed=4)
        report = build_report(rows)
        if report.perturbed_accuracy is None or report.standard_accuracy <= 0:
            assert report.fmr is None
        else:
            assert report.fmr == fmr_raw(
                report.perturbed_accuracy, report.standard_accuracy
            )

    def test_round_trip_through_dict(self):
        rows = random_rows(200, seed=5)
        report = build_report(rows, config_fingerprint="abc")
        clone = EvaluationReport.from_dict(json.loads(json.dumps(report.to_dict())))
        assert clone.to_dict() == report.to_dict()

    def test_rounded_block_handles_undefined(self):
        rows = [
            {
                "label": 0,
                "class_name": "c0",
                "status": ORIGINAL_KEPT,
                "prediction_original": 0,
                "prediction_final": 0,
            }
        ]
        report = build_report(rows)
        assert report.perturbed_accuracy is None
        assert report.fmr is None
        assert report.rounded["perturbed_accuracy"] is None
        assert report.rounded["fmr"] is None
        assert report.rounded["standard_accuracy"] == 100.0


class TestComputeReport:
    def test_matches_build_report_on_same_scenario(self):
        model = PixelLossModel(boundary=0.5)
        samples = [
            one_pixel_sample(0.9, 1, "a"),
            one_pixel_sample(0.2, 0, "b"),
            one_pixel_sample(0.3, 1, "c"),
        ]
        outcomes = [
            outcome(PERTURBED, label=1, pixel=0.8, sid="a"),
            outcome(ORIGINAL_KEPT, label=0, pixel=0.2, sid="b"),
            outcome(PERTURBED, label=1, pixel=0.1, sid="c"),
        ]
        report = compute_report(model, samples, outcomes)
        rows = []
        for s, o in zip(samples, outcomes):
            rows.append(
                {
                    "label": s.label,
                    "class_name": str(s.label),
                    "status": o.status,
                    "prediction_original": int(np.argmax(model.predict(s.image))),
                    "prediction_final": int(np.argmax(model.predict(o.final_image))),
                }
            )
        assert build_report(rows).to_dict() == report.to_dict()

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            compute_report(PixelLossModel(), [one_pixel_sample(0.5)], [])
