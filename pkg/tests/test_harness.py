"""Harness integration: config, IO, records, runs, transfer, reporting, CLI."""

from __future__ import annotations

import csv
import json
import shutil
from dataclasses import asdict
from types import SimpleNamespace

import numpy as np
import pytest
from PIL import Image

from fmrbench.errors import (
    AdapterError,
    ConfigurationError,
    ContractViolationError,
    IntegrityError,
)
from fmrbench.harness.cli import build_parser, main
from fmrbench.harness.config import RunConfig, apply_overrides, load_config
from fmrbench.harness.data import (
    load_dataset,
    load_image,
    save_image,
    sha256_file,
    write_dataset,
)
from fmrbench.harness.records import ResultRecord, read_records, truncate_to
from fmrbench.harness.registry import build_generator, build_model, build_oracle
from fmrbench.harness.reporting import (
    fmr_bar_chart,
    per_class_csv,
    per_class_markdown,
    per_class_rows,
    summary_csv,
    summary_markdown,
)
from fmrbench.harness.runner import (
    MANIFEST_SCHEMA,
    config_fingerprint,
    load_mask,
    prepare_run,
    run_evaluation,
    run_outcomes,
    run_transfer,
)
from fmrbench.metrics import build_report, fmr_raw, round2
from fmrbench.perturbation import (
    DIAGNOSTIC_ABORT,
    ORIGINAL_KEPT,
    PERTURBED,
    LabeledSample,
    PerturbationConfig,
)
from helpers import DATA_MINI

N_RUN = 30


def mini_config(out_dir, **over) -> RunConfig:
    kwargs = dict(
        dataset=str(DATA_MINI),
        output_dir=str(out_dir),
        model="toy-convnet",
        perturbation=PerturbationConfig(budget=3, step_size=0.01),
        max_samples=N_RUN,
    )
    kwargs.update(over)
    return RunConfig(**kwargs)


def record_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.readlines()


@pytest.fixture(scope="module")
def run_a(tmp_path_factory):
    """A completed 30-sample evaluation run, shared read-only by tests."""
    out = tmp_path_factory.mktemp("run-a")
    config = mini_config(out)
    report = run_evaluation(config)
    assert report is not None
    return SimpleNamespace(config=config, out=out, report=report)


@pytest.fixture(scope="module")
def export_run(tmp_path_factory):
    """A completed run with --export-images, manifest included."""
    out = tmp_path_factory.mktemp("run-export")
    config = mini_config(out, export_images=True, max_samples=20)
    report = run_evaluation(config)
    assert report is not None
    with open(out / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return SimpleNamespace(config=config, out=out, report=report, manifest=manifest)


@pytest.fixture(scope="module")
def tampered_export(export_run, tmp_path_factory):
    """Copy of the export run with one image modified after manifest write."""
    dst = tmp_path_factory.mktemp("tampered") / "run"
    shutil.copytree(export_run.out, dst)
    victim = dst / export_run.manifest["images"][0]["path"]
    with open(victim, "ab") as fh:
        fh.write(b"\x00")
    return SimpleNamespace(out=dst, victim=victim)


class TestRunConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigurationError, match="bogus_key"):
            RunConfig.from_dict({"bogus_key": 1})

    def test_load_config_errors(self, tmp_path):
        bad_json = tmp_path / "bad.json"
        bad_json.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_config(bad_json)
        not_object = tmp_path / "list.json"
        not_object.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_config(not_object)
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "missing.json")

    def test_dict_round_trip(self, tmp_path):
        config = mini_config(tmp_path, fgsm_epsilon=0.003, grayscale=True)
        again = RunConfig.from_dict(config.to_dict())
        assert again.to_dict() == config.to_dict()

    def test_validate_requires_dataset(self, tmp_path):
        with pytest.raises(ConfigurationError, match="dataset"):
            RunConfig(dataset="", output_dir=str(tmp_path)).validate()
        with pytest.raises(ConfigurationError, match="not found"):
            RunConfig(
                dataset=str(tmp_path / "nope"), output_dir=str(tmp_path)
            ).validate()

    def test_validate_requires_output_dir(self):
        with pytest.raises(ConfigurationError, match="output_dir"):
            RunConfig(dataset=str(DATA_MINI), output_dir="").validate()

    def test_validate_dataset_format(self, tmp_path):
        config = mini_config(tmp_path, dataset_format="zipfile")
        with pytest.raises(ConfigurationError, match="dataset_format"):
            config.validate()

    def test_validate_numeric_ranges(self, tmp_path):
        with pytest.raises(ConfigurationError, match="fgsm_epsilon"):
            mini_config(tmp_path, fgsm_epsilon=0.0).validate()
        with pytest.raises(ConfigurationError, match="max_samples"):
            mini_config(tmp_path, max_samples=0).validate()

    def test_validate_checkpoint_paths(self, tmp_path):
        config = mini_config(tmp_path, model_checkpoint=str(tmp_path / "no.npz"))
        with pytest.raises(ConfigurationError, match="model_checkpoint"):
            config.validate()

    def test_overrides_route_to_perturbation(self, tmp_path):
        config = mini_config(tmp_path)
        out = apply_overrides(config, budget=9, step_size=0.5, seed=3)
        assert out.perturbation.budget == 9
        assert out.perturbation.step_size == 0.5
        assert out.perturbation.seed == 3
        # untouched fields survive
        assert out.dataset == config.dataset

    def test_overrides_top_level_and_none_skipped(self, tmp_path):
        config = mini_config(tmp_path)
        out = apply_overrides(config, model="toy-mlp", budget=None)
        assert out.model == "toy-mlp"
        assert out.perturbation.budget == config.perturbation.budget

    def test_override_unknown_key(self, tmp_path):
        with pytest.raises(ConfigurationError, match="nonsense"):
            apply_overrides(mini_config(tmp_path), nonsense=1)


class TestImageIO:
    @pytest.mark.parametrize("channels", [1, 3])
    def test_png_round_trip_exact(self, tmp_path, channels):
        # values on the 1/255 grid survive quantization untouched
        h, w = 5, 7
        arr = (np.arange(h * w * channels).reshape(h, w, channels) % 256) / 255.0
        path = tmp_path / "img.png"
        save_image(arr, path)
        assert np.array_equal(load_image(path), arr)

    def test_save_rejects_bad_shapes(self, tmp_path):
        with pytest.raises(ValueError):
            save_image(np.zeros((4, 4)), tmp_path / "a.png")
        with pytest.raises(ValueError):
            save_image(np.zeros((4, 4, 2)), tmp_path / "b.png")

    def test_quantization_error_bound(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.uniform(size=(8, 8, 3))
        path = tmp_path / "q.png"
        save_image(arr, path)
        err = np.abs(load_image(path) - arr).max()
        assert err <= 0.5 / 255.0 + 1e-12

    def test_palette_and_alpha_modes_collapse_to_rgb(self, tmp_path):
        rgba = Image.new("RGBA", (4, 4), (10, 20, 30, 255))
        rgba_path = tmp_path / "rgba.png"
        rgba.save(rgba_path)
        arr = load_image(rgba_path)
        assert arr.shape == (4, 4, 3)
        assert np.allclose(arr[0, 0], np.array([10, 20, 30]) / 255.0)

        pal = Image.new("RGB", (4, 4), (99, 0, 0)).convert(
            "P", palette=Image.Palette.ADAPTIVE
        )
        pal_path = tmp_path / "pal.png"
        pal.save(pal_path)
        arr = load_image(pal_path)
        assert arr.shape == (4, 4, 3)

    def test_unsupported_mode_rejected(self, tmp_path):
        path = tmp_path / "bilevel.png"
        Image.new("1", (4, 4)).save(path)
        with pytest.raises(ConfigurationError, match="mode"):
            load_image(path)


def build_class_tree(root, jitter=0):
    """Two-class PNG tree with deterministic, grid-exact pixel values."""
    rng = np.random.default_rng(1 + jitter)
    names = ("alpha", "beta")
    for label, name in enumerate(names):
        for i in range(2):
            arr = rng.integers(0, 256, size=(6, 6, 3)) / 255.0
            save_image(arr, root / name / f"s{i}.png")
    return names


class TestDatasetLoading:
    def test_class_dirs_layout(self, tmp_path):
        build_class_tree(tmp_path)
        ds = load_dataset(tmp_path)
        assert ds.class_names == ("alpha", "beta")
        assert len(ds) == 4
        assert [s.id for s in ds.samples] == [
            "alpha/s0", "alpha/s1", "beta/s0", "beta/s1",
        ]
        assert [s.label for s in ds.samples] == [0, 0, 1, 1]
        assert all(s.image.shape == (6, 6, 3) for s in ds.samples)

    def test_class_order_is_sorted_names(self, tmp_path):
        save_image(np.zeros((2, 2, 1)), tmp_path / "zeta" / "a.png")
        save_image(np.zeros((2, 2, 1)), tmp_path / "alpha" / "a.png")
        ds = load_dataset(tmp_path)
        assert ds.class_names == ("alpha", "zeta")

    def test_digest_stable_and_content_sensitive(self, tmp_path):
        build_class_tree(tmp_path)
        first = load_dataset(tmp_path).digest
        assert load_dataset(tmp_path).digest == first
        save_image(np.ones((6, 6, 3)) * 0.5, tmp_path / "alpha" / "s0.png")
        assert load_dataset(tmp_path).digest != first

    def test_empty_roots_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_dataset(tmp_path)  # no class directories
        (tmp_path / "only").mkdir()
        with pytest.raises(ConfigurationError, match="no samples"):
            load_dataset(tmp_path)
        with pytest.raises(ConfigurationError, match="not a directory"):
            load_dataset(tmp_path / "missing")

    def test_unknown_format(self, tmp_path):
        build_class_tree(tmp_path)
        with pytest.raises(ConfigurationError, match="dataset_format"):
            load_dataset(tmp_path, "zipfile")

    def index_tree(self, root, rows=None):
        save_image(np.zeros((3, 3, 1)), root / "x.png")
        save_image(np.ones((3, 3, 1)), root / "y.png")
        index = {
            "classes": ["pos", "neg"],
            "samples": rows
            if rows is not None
            else [
                {"id": "first", "path": "x.png", "label": 0},
                {"id": "second", "path": "y.png", "label": 1},
            ],
        }
        with open(root / "index.json", "w", encoding="utf-8") as fh:
            json.dump(index, fh)

    def test_index_layout(self, tmp_path):
        self.index_tree(tmp_path)
        ds = load_dataset(tmp_path, "index")
        # index order is authoritative, not sorted
        assert ds.class_names == ("pos", "neg")
        assert [s.id for s in ds.samples] == ["first", "second"]
        assert [s.label for s in ds.samples] == [0, 1]

    def test_index_errors(self, tmp_path):
        with pytest.raises(ConfigurationError, match="index.json"):
            load_dataset(tmp_path, "index")
        self.index_tree(
            tmp_path,
            rows=[{"id": "a", "path": "x.png", "label": 7}],
        )
        with pytest.raises(ConfigurationError, match="out of range"):
            load_dataset(tmp_path, "index")
        self.index_tree(
            tmp_path,
            rows=[{"id": "a", "path": "gone.png", "label": 0}],
        )
        with pytest.raises(ConfigurationError, match="missing"):
            load_dataset(tmp_path, "index")
        self.index_tree(
            tmp_path,
            rows=[
                {"id": "a", "path": "x.png", "label": 0},
                {"id": "a", "path": "y.png", "label": 1},
            ],
        )
        with pytest.raises(ConfigurationError, match="duplicate"):
            load_dataset(tmp_path, "index")

    def test_write_dataset_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        samples = [
            LabeledSample(
                image=rng.integers(0, 256, size=(4, 4, 3)) / 255.0,
                label=label,
                id=f"{name}/im{i}",
            )
            for label, name in enumerate(("dog", "fish"))
            for i in range(2)
        ]
        write_dataset(samples, ("dog", "fish"), tmp_path)
        ds = load_dataset(tmp_path)
        assert ds.class_names == ("dog", "fish")
        assert [s.id for s in ds.samples] == [s.id for s in samples]
        for loaded, original in zip(ds.samples, samples):
            assert np.array_equal(loaded.image, original.image)


def make_record(i=0, **over) -> ResultRecord:
    fields = dict(
        id=f"a/s{i}",
        label=0,
        class_name="a",
        status=PERTURBED,
        accepted_iterations=2,
        loss_first=0.5,
        loss_last=0.9,
        n_trace=3,
        prediction_original=0,
        prediction_final=1,
        oracle_verdict_final=True,
        diagnostic=None,
        export_path=None,
        export_sha256=None,
        config="abcdef123456",
    )
    fields.update(over)
    return ResultRecord(**fields)


class TestRecords:
    def test_line_is_canonical_json(self):
        record = make_record()
        line = record.to_line()
        assert line.endswith("\n")
        payload = json.loads(line)
        assert payload == asdict(record)
        assert list(payload) == sorted(payload)
        assert line == json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    def test_read_clean_file(self, tmp_path):
        path = tmp_path / "records.jsonl"
        path.write_text("".join(make_record(i).to_line() for i in range(3)))
        records, clean = read_records(path)
        assert [r.id for r in records] == ["a/s0", "a/s1", "a/s2"]
        assert clean == path.stat().st_size

    def test_interrupted_tail_dropped_and_truncated(self, tmp_path):
        path = tmp_path / "records.jsonl"
        good = make_record(0).to_line() + make_record(1).to_line()
        path.write_text(good + make_record(2).to_line()[:-20])
        records, clean = read_records(path)
        assert len(records) == 2
        assert clean == len(good.encode("utf-8"))
        truncate_to(path, clean)
        assert path.stat().st_size == clean
        records, clean = read_records(path)
        assert len(records) == 2
        assert clean == path.stat().st_size

    def test_valid_tail_without_newline_kept(self, tmp_path):
        path = tmp_path / "records.jsonl"
        path.write_text(make_record(0).to_line() + make_record(1).to_line()[:-1])
        records, clean = read_records(path)
        assert len(records) == 2
        assert clean == path.stat().st_size

    def test_corrupt_middle_line_raises(self, tmp_path):
        path = tmp_path / "records.jsonl"
        path.write_text(
            make_record(0).to_line() + "{broken\n" + make_record(2).to_line()
        )
        with pytest.raises(IntegrityError, match="line 2"):
            read_records(path)

    def test_wrong_schema_line_raises(self, tmp_path):
        path = tmp_path / "records.jsonl"
        alien = make_record(1)
        alien.schema = "somebody/else/v9"
        path.write_text(make_record(0).to_line() + alien.to_line())
        with pytest.raises(IntegrityError, match="line 2"):
            read_records(path)

    def test_empty_middle_line_raises(self, tmp_path):
        path = tmp_path / "records.jsonl"
        path.write_text(make_record(0).to_line() + "\n" + make_record(2).to_line())
        with pytest.raises(IntegrityError, match="empty record line 2"):
            read_records(path)

    def test_from_dict_guards(self):
        good = json.loads(make_record().to_line())
        assert ResultRecord.from_dict(dict(good)).id == "a/s0"
        bad_schema = dict(good, schema="other/v1")
        with pytest.raises(IntegrityError, match="schema"):
            ResultRecord.from_dict(bad_schema)
        missing = dict(good)
        del missing["label"]
        with pytest.raises(IntegrityError, match="malformed"):
            ResultRecord.from_dict(missing)


class TestRegistry:
    def test_unknown_names_rejected(self, glyph_labels):
        with pytest.raises(ConfigurationError, match="toy-convnet"):
            build_model("resnet50")
        with pytest.raises(ConfigurationError, match="reference-ae"):
            build_generator("stylegan")
        with pytest.raises(ConfigurationError, match="surrogate"):
            build_oracle("human", glyph_labels)

    def test_external_adapters_require_options(self, glyph_labels):
        with pytest.raises(ConfigurationError, match="adapter_options"):
            build_generator("vqgan-external")
        with pytest.raises(ConfigurationError, match="adapter_options"):
            build_oracle("clip-external", glyph_labels)

    def test_external_module_failure_is_adapter_error(self):
        options = {"generator": {"module": "fmrbench_no_such_module"}}
        with pytest.raises(AdapterError):
            build_generator("vqgan-external", adapter_options=options)

    def test_grayscale_wrapping(self):
        model = build_model("toy-mlp", grayscale=True)
        assert tuple(model.image_shape) == (16, 16, 3)

    def test_bad_checkpoint_path_is_adapter_error(self, tmp_path):
        missing = tmp_path / "none.npz"
        missing.write_bytes(b"not an npz")
        with pytest.raises(AdapterError):
            build_generator("reference-ae", checkpoint=str(missing))


class TestFingerprint:
    def test_output_dir_excluded(self, tmp_path):
        a = config_fingerprint(mini_config(tmp_path / "a"), "digest0")
        b = config_fingerprint(mini_config(tmp_path / "b"), "digest0")
        assert a == b
        assert len(a) == 64 and set(a) <= set("0123456789abcdef")

    def test_sensitive_inputs(self, tmp_path):
        base = config_fingerprint(mini_config(tmp_path), "digest0")
        changed_step = mini_config(
            tmp_path, perturbation=PerturbationConfig(budget=3, step_size=0.02)
        )
        assert config_fingerprint(changed_step, "digest0") != base
        assert config_fingerprint(mini_config(tmp_path), "digest1") != base
        assert (
            config_fingerprint(mini_config(tmp_path, max_samples=5), "digest0")
            != base
        )


class TestEvaluationRun:
    def test_records_complete_and_tagged(self, run_a):
        records, clean = read_records(run_a.out / "records.jsonl")
        assert len(records) == N_RUN
        assert clean == (run_a.out / "records.jsonl").stat().st_size
        ctx = prepare_run(run_a.config)
        fp12 = ctx.fingerprint[:12]
        assert all(r.config == fp12 for r in records)
        assert all(
            r.status in (PERTURBED, ORIGINAL_KEPT, DIAGNOSTIC_ABORT) for r in records
        )
        assert [r.id for r in records] == [s.id for s in ctx.samples]

    def test_report_file_matches_returned_report(self, run_a):
        with open(run_a.out / "report.json", "r", encoding="utf-8") as fh:
            stored = json.load(fh)
        assert stored == run_a.report.to_dict()
        assert stored["schema"] == "fmrbench/evaluation-report/v1"
        counts = stored["counts"]
        assert (
            counts["perturbed"] + counts["original_kept"] + counts["diagnostic_aborts"]
            == counts["total"]
            == N_RUN
        )

    def test_report_recomputable_from_records(self, run_a):
        records, _ = read_records(run_a.out / "records.jsonl")
        rows = [
            {
                "label": r.label,
                "class_name": r.class_name,
                "status": r.status,
                "prediction_original": r.prediction_original,
                "prediction_final": r.prediction_final,
            }
            for r in records
        ]
        again = build_report(rows)
        assert again.standard_accuracy == run_a.report.standard_accuracy
        assert again.perturbed_accuracy == run_a.report.perturbed_accuracy
        assert again.validation_rate == run_a.report.validation_rate
        assert again.fmr == run_a.report.fmr
        assert again.counts == run_a.report.counts

    def test_resume_equals_uninterrupted(self, run_a, tmp_path):
        config = mini_config(tmp_path)
        assert run_evaluation(config, stop_after=7) is None
        assert len(record_lines(tmp_path / "records.jsonl")) == 7
        report = run_evaluation(mini_config(tmp_path))
        assert report is not None
        assert (tmp_path / "records.jsonl").read_bytes() == (
            run_a.out / "records.jsonl"
        ).read_bytes()
        assert (tmp_path / "report.json").read_bytes() == (
            run_a.out / "report.json"
        ).read_bytes()

    def test_completed_run_rerun_is_idempotent(self, run_a):
        before = (run_a.out / "records.jsonl").read_bytes()
        report = run_evaluation(mini_config(run_a.out))
        assert report.to_dict() == run_a.report.to_dict()
        assert (run_a.out / "records.jsonl").read_bytes() == before

    def test_mixed_fingerprint_refused(self, tmp_path):
        config = mini_config(tmp_path, max_samples=3)
        run_evaluation(config)
        other = mini_config(
            tmp_path,
            max_samples=3,
            perturbation=PerturbationConfig(budget=3, step_size=0.02),
        )
        with pytest.raises(IntegrityError, match="refusing to mix"):
            run_evaluation(other)

    def test_prepare_run_wiring(self, run_a):
        ctx = prepare_run(run_a.config)
        assert len(ctx.samples) == N_RUN
        assert list(ctx.label_set.names) == list(ctx.dataset.class_names)
        assert ctx.mask is None

    def test_class_count_mismatch_fails_fast(self, tmp_path):
        root = tmp_path / "two-class"
        rng = np.random.default_rng(0)
        for name in ("a", "b"):
            save_image(rng.uniform(size=(16, 16, 1)), root / name / "s0.png")
        config = mini_config(tmp_path, dataset=str(root), max_samples=None)
        # the oracle wiring guard fires first; either way it is a class-count error
        with pytest.raises((ConfigurationError, ContractViolationError), match="class"):
            prepare_run(config)

    def test_sparse_mask_dim_guard(self, tmp_path):
        mask_path = tmp_path / "mask.json"
        mask_path.write_text(json.dumps({"selected_dims": [0, 1], "total_dims": 7}))
        config = mini_config(tmp_path, sparse_mask=str(mask_path))
        with pytest.raises(ConfigurationError, match="7 dims"):
            prepare_run(config)

    def test_load_mask_variants(self, tmp_path):
        bare = tmp_path / "bare.json"
        bare.write_text(json.dumps({"selected_dims": [2, 5], "total_dims": 48}))
        mask = load_mask(bare)
        assert mask.selected_dims == (2, 5)
        assert mask.total_dims == 48

        selection = tmp_path / "selection.json"
        selection.write_text(
            json.dumps({"mask": {"selected_dims": [1], "total_dims": 48}})
        )
        assert load_mask(selection).selected_dims == (1,)

        garbage = tmp_path / "other.json"
        garbage.write_text(json.dumps({"something": 1}))
        with pytest.raises(ConfigurationError):
            load_mask(garbage)


class TestExportAndTransfer:
    def test_manifest_shape(self, export_run):
        manifest = export_run.manifest
        assert manifest["schema"] == MANIFEST_SCHEMA
        assert manifest["quantization"] == {
            "encoding": "png-8bit",
            "max_abs_pixel_error": 1.0 / 255.0,
        }
        assert manifest["source_counts"] == export_run.report.counts
        assert manifest["source_validation_rate"] == export_run.report.validation_rate
        ids = [row["id"] for row in manifest["images"]]
        assert ids == sorted(ids)
        assert len(ids) == export_run.report.counts["perturbed"]
        ds = load_dataset(DATA_MINI)
        assert manifest["label_names"] == list(ds.class_names)

    def test_exported_files_verify(self, export_run):
        for entry in export_run.manifest["images"]:
            path = export_run.out / entry["path"]
            assert path.exists()
            assert sha256_file(path) == entry["sha256"]
            assert load_image(path).shape == (16, 16, 1)

    def test_exports_match_in_memory_finals(self, export_run):
        outcomes = run_outcomes(prepare_run(export_run.config))
        by_id = {o.sample_id: o for o in outcomes}
        for entry in export_run.manifest["images"]:
            final = by_id[entry["id"]].final_image
            stored = load_image(export_run.out / entry["path"])
            assert np.abs(stored - final).max() <= 1.0 / 255.0 + 1e-12

    def test_transfer_same_model(self, export_run, tmp_path):
        report = run_transfer(
            export_run.out / "manifest.json", "toy-convnet", output_dir=tmp_path
        )
        assert report["schema"] == "fmrbench/transfer-report/v1"
        n_images = len(export_run.manifest["images"])
        assert report["counts"]["transferred_images"] == n_images
        assert report["validation_rate"] == export_run.report.validation_rate
        if report["perturbed_accuracy"] is not None and report["standard_accuracy"] > 0:
            assert report["fmr"] == fmr_raw(
                report["perturbed_accuracy"], report["standard_accuracy"]
            )
        assert report["rounded"]["fmr"] == (
            None if report["fmr"] is None else round2(report["fmr"])
        )
        with open(tmp_path / "transfer-report.json", "r", encoding="utf-8") as fh:
            assert json.load(fh) == report

    def test_transfer_second_model(self, export_run):
        report = run_transfer(export_run.out / "manifest.json", "toy-mlp")
        assert report["model"] == "toy-mlp"
        assert 0.0 <= report["standard_accuracy"] <= 100.0
        assert 0.0 <= report["perturbed_accuracy"] <= 100.0

    def test_transfer_dataset_override(self, export_run):
        base = run_transfer(export_run.out / "manifest.json", "toy-convnet")
        moved = run_transfer(
            export_run.out / "manifest.json",
            "toy-convnet",
            dataset_override=str(DATA_MINI),
        )
        assert moved["standard_accuracy"] == base["standard_accuracy"]
        assert moved["perturbed_accuracy"] == base["perturbed_accuracy"]

    def test_tampered_image_rejected(self, tampered_export):
        with pytest.raises(IntegrityError, match="checksum mismatch"):
            run_transfer(tampered_export.out / "manifest.json", "toy-convnet")

    def test_missing_image_rejected(self, export_run, tmp_path):
        dst = tmp_path / "run"
        shutil.copytree(export_run.out, dst)
        victim = dst / export_run.manifest["images"][0]["path"]
        victim.unlink()
        with pytest.raises(IntegrityError, match="missing"):
            run_transfer(dst / "manifest.json", "toy-convnet")

    def test_label_names_mismatch_rejected(self, export_run):
        edited = dict(export_run.manifest)
        edited["label_names"] = list(reversed(edited["label_names"]))
        path = export_run.out / "edited-manifest.json"
        path.write_text(json.dumps(edited))
        with pytest.raises(ConfigurationError, match="label names"):
            run_transfer(path, "toy-convnet")

    def test_alien_schema_rejected(self, export_run):
        edited = dict(export_run.manifest)
        edited["schema"] = "other/v1"
        path = export_run.out / "alien-manifest.json"
        path.write_text(json.dumps(edited))
        with pytest.raises(IntegrityError, match="schema"):
            run_transfer(path, "toy-convnet")


def synth_report(all_kept=False):
    status = ORIGINAL_KEPT if all_kept else PERTURBED
    rows = []
    for label, name in enumerate(("a", "b")):
        for i in range(4):
            rows.append(
                {
                    "label": label,
                    "class_name": name,
                    "status": status,
                    "prediction_original": label if i < 3 else label + 1,
                    "prediction_final": label if i < 2 else label + 1,
                }
            )
    return build_report(rows)


class TestReporting:
    def test_summary_markdown_layout(self):
        text = summary_markdown([("demo", synth_report())])
        lines = text.splitlines()
        assert lines[0] == "| Model | SA | PA | FMR |"
        assert lines[1] == "| --- | --- | --- | --- |"
        assert lines[2].startswith("| demo | 75.00 | 50.00 |")

    def test_summary_undefined_renders_na(self):
        text = summary_markdown([("kept", synth_report(all_kept=True))])
        row = text.splitlines()[2]
        assert row == "| kept | 75.00 | n/a | n/a |"

    def test_summary_csv_round_trip(self):
        text = summary_csv([("m1", synth_report()), ("m2", synth_report())])
        rows = list(csv.reader(text.splitlines()))
        assert rows[0] == ["Model", "SA", "PA", "FMR"]
        assert len(rows) == 3
        assert rows[1][0] == "m1"
        assert float(rows[1][1]) == 75.0

    def test_summary_csv_undefined_is_empty_cell(self):
        text = summary_csv([("kept", synth_report(all_kept=True))])
        rows = list(csv.reader(text.splitlines()))
        assert rows[1] == ["kept", "75.00", "", ""]

    def test_per_class_rows_ordered_with_total(self):
        report = synth_report()
        rows = per_class_rows(report)
        assert [r["class"] for r in rows] == ["a", "b", "Total"]
        assert rows[-1]["sa"] == report.standard_accuracy
        assert rows[-1]["vr"] == report.validation_rate

    def test_per_class_tables(self):
        report = synth_report()
        md = per_class_markdown(report)
        assert md.splitlines()[0] == "| Class | SA | VR | FMR |"
        assert "| Total |" in md
        text = per_class_csv(report)
        rows = list(csv.reader(text.splitlines()))
        assert rows[0] == ["Class", "SA", "VR", "FMR"]
        assert rows[-1][0] == "Total"

    def test_bar_chart_written(self, tmp_path):
        path = tmp_path / "chart.png"
        fmr_bar_chart(
            [("one", synth_report()), ("kept", synth_report(all_kept=True))], path
        )
        with Image.open(path) as img:
            assert img.size == (640, 360)
            assert img.mode == "RGB"


class TestCli:
    def eval_args(self, out_dir, **extra):
        args = [
            "evaluate",
            "--dataset", str(DATA_MINI),
            "--output-dir", str(out_dir),
            "--model", "toy-convnet",
            "--budget", "2",
            "--step-size", "0.01",
            "--max-samples", "6",
        ]
        for key, value in extra.items():
            args += [f"--{key.replace('_', '-')}", str(value)]
        return args

    def test_evaluate_success(self, tmp_path, capsys):
        assert main(self.eval_args(tmp_path)) == 0
        out = capsys.readouterr().out
        assert "SA" in out and "FMR" in out
        assert len(record_lines(tmp_path / "records.jsonl")) == 6
        assert (tmp_path / "report.json").exists()

    def test_evaluate_stop_after(self, tmp_path, capsys):
        assert main(self.eval_args(tmp_path) + ["--stop-after", "2"]) == 0
        assert "stopped after 2" in capsys.readouterr().out
        assert len(record_lines(tmp_path / "records.jsonl")) == 2

    def test_missing_dataset_exits_two(self, tmp_path, capsys):
        args = self.eval_args(tmp_path)
        args[args.index("--dataset") + 1] = str(tmp_path / "gone")
        assert main(args) == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_model_exits_two(self, tmp_path, capsys):
        assert main(self.eval_args(tmp_path, model="resnet50")) == 2

    def test_adapter_failure_exits_three(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps(
                {
                    "dataset": str(DATA_MINI),
                    "output_dir": str(tmp_path / "out"),
                    "generator": "vqgan-external",
                    "adapter_options": {
                        "generator": {"module": "fmrbench_no_such_module"}
                    },
                    "max_samples": 2,
                }
            )
        )
        assert main(["evaluate", "--config", str(config_path)]) == 3
        assert "adapter error" in capsys.readouterr().err

    def test_tampered_manifest_exits_four(self, tampered_export, capsys):
        rc = main(
            [
                "transfer",
                "--manifest", str(tampered_export.out / "manifest.json"),
                "--model", "toy-convnet",
            ]
        )
        assert rc == 4
        assert "integrity error" in capsys.readouterr().err

    def test_config_file_with_flag_precedence(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps(
                {
                    "dataset": str(DATA_MINI),
                    "output_dir": str(tmp_path / "out"),
                    "perturbation": {"budget": 2, "step_size": 0.01},
                    "max_samples": 6,
                }
            )
        )
        rc = main(["evaluate", "--config", str(config_path), "--max-samples", "3"])
        assert rc == 0
        assert len(record_lines(tmp_path / "out" / "records.jsonl")) == 3

    def test_verify_theory_cli(self, tmp_path, capsys):
        out = tmp_path / "theory.json"
        rc = main(
            [
                "verify-theory",
                "--p", "1",
                "--m", "2",
                "--sizes", "3,4",
                "--trials", "400",
                "--out", str(out),
            ]
        )
        assert rc == 0
        assert "overall: pass" in capsys.readouterr().out
        with open(out, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        assert payload["passed"] is True
        assert payload["config"]["n"] == [3, 4]

    def test_verify_theory_sizes_mismatch(self, capsys):
        rc = main(["verify-theory", "--m", "3", "--sizes", "1,2", "--trials", "10"])
        assert rc == 2

    def test_report_cli_markdown(self, run_a, capsys):
        rc = main(["report", "--run", str(run_a.out), "--per-class"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "| Model | SA | PA | FMR |" in out
        assert "| Class | SA | VR | FMR |" in out

    def test_report_cli_csv_chart(self, run_a, tmp_path, capsys):
        table = tmp_path / "table.csv"
        chart = tmp_path / "chart.png"
        rc = main(
            [
                "report",
                "--run", str(run_a.out),
                "--format", "csv",
                "--out", str(table),
                "--chart", str(chart),
            ]
        )
        assert rc == 0
        assert table.read_text().startswith("Model,SA,PA,FMR")
        with Image.open(chart) as img:
            assert img.size == (640, 360)

    def test_report_names_mismatch(self, run_a, capsys):
        rc = main(["report", "--run", str(run_a.out), "--names", "a,b"])
        assert rc == 2

    def test_sparsify_cli(self, tmp_path, capsys):
        rc = main(
            [
                "sparsify",
                "--dataset", str(DATA_MINI),
                "--output-dir", str(tmp_path),
                "--model", "toy-convnet",
                "--budget", "3",
                "--step-size", "0.01",
                "--max-samples", "30",
                "--lambdas", "0.01,2.0",
                "--max-epochs", "30",
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "collected 30 latent pairs" in out
        assert (tmp_path / "sparse-lambda-0.01.json").exists()
        assert (tmp_path / "sparse-lambda-2.json").exists()
        with open(tmp_path / "sparse-sweep.json", "r", encoding="utf-8") as fh:
            sweep = json.load(fh)
        assert len(sweep["rows"]) == 2
        assert sweep["schema"] == "fmrbench/sparse-sweep/v1"

    def test_parser_tri_state_defaults(self):
        args = build_parser().parse_args(["evaluate"])
        assert args.grayscale is None
        assert args.export_images is None
        assert args.stop_after is None
