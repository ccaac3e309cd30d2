"""Evaluation and transfer runs: adapter wiring, fingerprints, persistence.

An evaluation run is resumable and reproducible: per-sample results stream to
records.jsonl as canonical JSON lines tagged with a fingerprint of everything
that determines the run's outputs. Re-running the same configuration over the
same inputs yields a byte-identical records file; an interrupted run picks up
where it stopped after truncating any partially written tail.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, IntegrityError
from ..fixtures import DEFAULT_CHECKPOINTS
from ..generators import SparseMask
from ..metrics import EvaluationReport, build_report, fmr_raw, round2, standard_accuracy
from ..models import fgsm_init
from ..oracles import LabelSet
from ..perturbation import PERTURBED, perturb_sample
from .config import RunConfig
from .data import load_dataset, load_image, save_image, sha256_file
from .records import ResultRecord, read_records, truncate_to
from .registry import build_generator, build_model, build_oracle

RECORDS_FILE = "records.jsonl"
REPORT_FILE = "report.json"
MANIFEST_FILE = "manifest.json"
MANIFEST_SCHEMA = "fmrbench/export-manifest/v1"
TRANSFER_REPORT_SCHEMA = "fmrbench/transfer-report/v1"


def _checkpoint_sha(override: str | None, bundled_key: str | None) -> str | None:
    if override is not None:
        return sha256_file(override)
    if bundled_key is not None:
        path = DEFAULT_CHECKPOINTS.get(bundled_key)
        if path is not None and path.exists():
            return sha256_file(path)
    return None


def config_fingerprint(config: RunConfig, dataset_digest: str) -> str:
    """Hash of everything that determines a run's per-sample outputs.

    The output directory is deliberately excluded so the same evaluation
    writes byte-identical records wherever it lands.
    """
    payload = {
        "dataset_digest": dataset_digest,
        "dataset_format": config.dataset_format,
        "model": {
            "name": config.model,
            "checkpoint_sha256": _checkpoint_sha(
                config.model_checkpoint, config.model
            ),
        },
        "grayscale": config.grayscale,
        "generator": {
            "name": config.generator,
            "checkpoint_sha256": _checkpoint_sha(
                config.generator_checkpoint,
                "reference-ae" if config.generator == "reference-ae" else None,
            ),
        },
        "oracle": {
            "name": config.oracle,
            "checkpoint_sha256": _checkpoint_sha(
                config.oracle_checkpoint,
                "surrogate" if config.oracle == "surrogate" else None,
            ),
        },
        "perturbation": config.perturbation.to_dict(),
        "fgsm_epsilon": config.fgsm_epsilon,
        "sparse_mask_sha256": (
            sha256_file(config.sparse_mask) if config.sparse_mask else None
        ),
        "max_samples": config.max_samples,
        "adapter_options": config.adapter_options,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_mask(path) -> SparseMask:
    """Read a sparse mask from a bare-mask or sparse-selection JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read sparse mask {path}: {exc}") from exc
    if isinstance(payload, dict) and "selected_dims" in payload:
        return SparseMask.from_dict(payload)
    if isinstance(payload, dict) and isinstance(payload.get("mask"), dict):
        return SparseMask.from_dict(payload["mask"])
    raise ConfigurationError(
        f"sparse mask file {path} holds neither a mask nor a sparse selection"
    )


def _sanitize_id(sample_id: str) -> str:
    return sample_id.replace("/", "__")


def _validate_wiring(sample, model, generator, oracle, label_set) -> None:
    """Fail fast, before any sample runs, if the adapters cannot compose."""
    if tuple(sample.image.shape) != tuple(model.image_shape):
        raise ConfigurationError(
            f"model expects image shape {tuple(model.image_shape)}, "
            f"dataset provides {tuple(sample.image.shape)}"
        )
    if model.n_classes != len(label_set):
        raise ConfigurationError(
            f"model has {model.n_classes} classes, dataset has {len(label_set)}"
        )
    latent = np.asarray(generator.encode(sample.image), dtype=np.float64)
    if latent.ndim != 1 or latent.size != generator.latent_dim:
        raise ConfigurationError(
            "generator encode does not produce a flat latent of its declared size"
        )
    decoded = generator.decode(latent)
    if tuple(decoded.shape) != tuple(sample.image.shape):
        raise ConfigurationError(
            f"generator decodes to shape {tuple(decoded.shape)}, "
            f"dataset provides {tuple(sample.image.shape)}"
        )
    scores = oracle.classify(sample.image).score_vector
    if np.asarray(scores).size != len(label_set):
        raise ConfigurationError(
            "oracle score vector length does not match the label set"
        )


def _record_rows(records) -> list[dict]:
    return [
        {
            "label": r.label,
            "class_name": r.class_name,
            "status": r.status,
            "prediction_original": r.prediction_original,
            "prediction_final": r.prediction_final,
        }
        for r in records
    ]


@dataclass
class RunContext:
    """Dataset and adapters wired and validated, ready to evaluate."""

    config: RunConfig
    dataset: object
    samples: tuple
    label_set: LabelSet
    model: object
    generator: object
    oracle: object
    mask: SparseMask | None
    fingerprint: str


def prepare_run(config: RunConfig) -> RunContext:
    """Load the dataset, build all adapters, and fail fast on bad wiring."""
    config.validate()
    dataset = load_dataset(config.dataset, config.dataset_format)
    samples = dataset.samples
    if config.max_samples is not None:
        samples = samples[: config.max_samples]
    if not samples:
        raise ConfigurationError("no samples to evaluate")

    label_set = LabelSet(names=dataset.class_names)
    model = build_model(config.model, config.model_checkpoint, config.grayscale)
    generator = build_generator(
        config.generator, config.generator_checkpoint, config.adapter_options
    )
    oracle = build_oracle(
        config.oracle, label_set, config.oracle_checkpoint, config.adapter_options
    )
    _validate_wiring(samples[0], model, generator, oracle, label_set)

    mask = None
    if config.sparse_mask is not None:
        mask = load_mask(config.sparse_mask)
        if mask.total_dims != generator.latent_dim:
            raise ConfigurationError(
                f"sparse mask covers {mask.total_dims} dims, "
                f"generator has {generator.latent_dim}"
            )

    return RunContext(
        config=config,
        dataset=dataset,
        samples=samples,
        label_set=label_set,
        model=model,
        generator=generator,
        oracle=oracle,
        mask=mask,
        fingerprint=config_fingerprint(config, dataset.digest),
    )


def run_evaluation(
    config: RunConfig,
    stop_after: int | None = None,
    progress=None,
) -> EvaluationReport | None:
    """Run (or resume) one evaluation; returns None if stopped early.

    stop_after limits how many new samples this call processes before
    returning without a report; it exists so interrupted runs can be
    exercised deterministically. progress, when given, is called with each
    freshly written ResultRecord.
    """
    ctx = prepare_run(config)
    dataset, samples = ctx.dataset, ctx.samples
    model, generator, oracle, mask = ctx.model, ctx.generator, ctx.oracle, ctx.mask
    fingerprint = ctx.fingerprint
    fp12 = fingerprint[:12]

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / RECORDS_FILE

    done: set[str] = set()
    if records_path.exists():
        existing, clean = read_records(records_path)
        if clean != records_path.stat().st_size:
            truncate_to(records_path, clean)
        for r in existing:
            if r.config != fp12:
                raise IntegrityError(
                    f"{records_path} was written under configuration {r.config}, "
                    f"current is {fp12}; refusing to mix runs"
                )
            done.add(r.id)

    processed = 0
    with open(records_path, "a", encoding="utf-8") as fh:
        for sample in samples:
            if sample.id in done:
                continue
            start_image = None
            if config.fgsm_epsilon is not None:
                start_image = fgsm_init(
                    sample.image, model, sample.label, config.fgsm_epsilon
                )
            outcome = perturb_sample(
                sample,
                model,
                generator,
                oracle,
                config.perturbation,
                mask=mask,
                initial_image=start_image,
            )
            prediction_original = int(np.argmax(model.predict(sample.image)))
            prediction_final = int(np.argmax(model.predict(outcome.final_image)))
            verdict_final = bool(oracle.verify(outcome.final_image, sample.label))

            export_path = None
            export_sha = None
            if config.export_images and outcome.status == PERTURBED:
                export_path = f"images/{_sanitize_id(sample.id)}.png"
                save_image(outcome.final_image, out_dir / export_path)
                export_sha = sha256_file(out_dir / export_path)

            record = ResultRecord(
                id=sample.id,
                label=int(sample.label),
                class_name=dataset.class_names[sample.label],
                status=outcome.status,
                accepted_iterations=int(outcome.accepted_iterations),
                loss_first=(
                    float(outcome.trace[0].loss_value) if outcome.trace else None
                ),
                loss_last=(
                    float(outcome.trace[-1].loss_value) if outcome.trace else None
                ),
                n_trace=len(outcome.trace),
                prediction_original=prediction_original,
                prediction_final=prediction_final,
                oracle_verdict_final=verdict_final,
                diagnostic=outcome.diagnostic,
                export_path=export_path,
                export_sha256=export_sha,
                config=fp12,
            )
            fh.write(record.to_line())
            fh.flush()
            if progress is not None:
                progress(record)
            processed += 1
            if stop_after is not None and processed >= stop_after:
                return None

    records, _ = read_records(records_path)
    report = build_report(
        _record_rows(records),
        class_names=dataset.class_names,
        config_fingerprint=fingerprint,
    )
    with open(out_dir / REPORT_FILE, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")

    if config.export_images:
        _write_manifest(out_dir, config, dataset.class_names, fingerprint,
                        report, records)
    return report


def _write_manifest(out_dir: Path, config: RunConfig, class_names, fingerprint,
                    report: EvaluationReport, records) -> None:
    images = [
        {
            "id": r.id,
            "label": r.label,
            "class_name": r.class_name,
            "path": r.export_path,
            "sha256": r.export_sha256,
        }
        for r in records
        if r.status == PERTURBED and r.export_path is not None
    ]
    images.sort(key=lambda row: row["id"])
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "dataset": str(config.dataset),
        "dataset_format": config.dataset_format,
        "config_fingerprint": fingerprint,
        "source_validation_rate": report.validation_rate,
        "source_counts": report.counts,
        "label_names": list(class_names),
        # Exported files are 8-bit PNG; each decodes back to within one
        # quantization step of the in-memory final image per pixel.
        "quantization": {
            "encoding": "png-8bit",
            "max_abs_pixel_error": 1.0 / 255.0,
        },
        "images": images,
    }
    with open(out_dir / MANIFEST_FILE, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def run_outcomes(ctx: RunContext) -> list:
    """Perturb every sample of a prepared run in memory, skipping persistence.

    Used by callers that consume outcomes directly (latent collection for
    sparse selection) rather than records on disk.
    """
    outcomes = []
    for sample in ctx.samples:
        start_image = None
        if ctx.config.fgsm_epsilon is not None:
            start_image = fgsm_init(
                sample.image, ctx.model, sample.label, ctx.config.fgsm_epsilon
            )
        outcomes.append(
            perturb_sample(
                sample,
                ctx.model,
                ctx.generator,
                ctx.oracle,
                ctx.config.perturbation,
                mask=ctx.mask,
                initial_image=start_image,
            )
        )
    return outcomes


def run_transfer(
    manifest_path,
    model_name: str,
    model_checkpoint: str | None = None,
    grayscale: bool = False,
    output_dir=None,
    dataset_override: str | None = None,
) -> dict:
    """Score a second model on a previously exported counterfactual set.

    The manifest's checksums are verified before anything is predicted; any
    missing or altered image aborts with IntegrityError. SA comes from the
    original dataset the manifest points at (dataset_override relocates it),
    PA from the exported images, and VR is inherited from the producing run
    since transfer adds no generation.
    """
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise IntegrityError(
            f"manifest schema {manifest.get('schema')!r} is not {MANIFEST_SCHEMA!r}"
        )

    base = manifest_path.parent
    entries = manifest.get("images", [])
    for entry in entries:
        path = base / entry["path"]
        if not path.exists():
            raise IntegrityError(f"exported image missing: {path}")
        actual = sha256_file(path)
        if actual != entry["sha256"]:
            raise IntegrityError(
                f"checksum mismatch for {path}: "
                f"manifest {entry['sha256']}, file {actual}"
            )

    dataset_root = dataset_override or manifest["dataset"]
    dataset = load_dataset(dataset_root, manifest.get("dataset_format", "class-dirs"))
    if list(dataset.class_names) != list(manifest["label_names"]):
        raise ConfigurationError(
            "dataset class names do not match the manifest's label names"
        )
    model = build_model(model_name, model_checkpoint, grayscale)
    if tuple(dataset.samples[0].image.shape) != tuple(model.image_shape):
        raise ConfigurationError(
            f"model expects image shape {tuple(model.image_shape)}, "
            f"dataset provides {tuple(dataset.samples[0].image.shape)}"
        )

    sa = standard_accuracy(model, dataset.samples)
    correct = 0
    for entry in entries:
        image = load_image(base / entry["path"])
        if int(np.argmax(model.predict(image))) == int(entry["label"]):
            correct += 1
    pa = 100.0 * correct / len(entries) if entries else None
    overall_fmr = fmr_raw(pa, sa) if (pa is not None and sa > 0) else None

    def _round(v):
        return None if v is None else round2(v)

    report = {
        "schema": TRANSFER_REPORT_SCHEMA,
        "model": model_name,
        "model_checkpoint_sha256": _checkpoint_sha(model_checkpoint, model_name),
        "grayscale": grayscale,
        "source_manifest": str(manifest_path),
        "source_fingerprint": manifest["config_fingerprint"],
        "standard_accuracy": sa,
        "perturbed_accuracy": pa,
        "validation_rate": manifest["source_validation_rate"],
        "fmr": overall_fmr,
        "rounded": {
            "standard_accuracy": _round(sa),
            "perturbed_accuracy": _round(pa),
            "validation_rate": _round(manifest["source_validation_rate"]),
            "fmr": _round(overall_fmr),
        },
        "counts": {
            "dataset_size": len(dataset),
            "transferred_images": len(entries),
            "correct_original": int(round(sa * len(dataset) / 100.0)),
            "correct_perturbed": correct,
        },
    }
    if output_dir is not None:
        out_dir = Path(output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "transfer-report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return report
