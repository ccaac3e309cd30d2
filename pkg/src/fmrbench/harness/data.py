"""Dataset and image IO.

Images live on disk as 8-bit PNG; in memory they are float64 arrays in
[0, 1] with shape [H, W, C] (C is 1 or 3). Datasets are directories in
one of two layouts:

  class-dirs: <root>/<class_name>/<file>.png, class order = sorted names
  index:      <root>/index.json listing {"classes": [...], "samples":
              [{"id", "path", "label"}, ...]}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigurationError
from ..perturbation import LabeledSample


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    class_names: tuple
    digest: str

    def __len__(self) -> int:
        return len(self.samples)


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float64)[..., None]
        elif img.mode == "RGB":
            arr = np.asarray(img, dtype=np.float64)
        elif img.mode in ("LA", "P", "RGBA", "I", "I;16"):
            # Palette and alpha variants collapse deterministically to RGB.
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
        else:
            raise ConfigurationError(
                f"unsupported image mode {img.mode!r} in {path}"
            )
    return arr / 255.0


def save_image(image: np.ndarray, path) -> None:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"image must be [H, W, 1] or [H, W, 3], got {arr.shape}")
    quantized = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if quantized.shape[2] == 1:
        img = Image.fromarray(quantized[..., 0], mode="L")
    else:
        img = Image.fromarray(quantized, mode="RGB")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_pairs(pairs) -> str:
    h = hashlib.sha256()
    for sample_id, file_sha in sorted(pairs):
        h.update(sample_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(file_sha.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def _load_class_dirs(root: Path):
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ConfigurationError(f"dataset {root} has no class directories")
    class_names = tuple(p.name for p in class_dirs)
    samples = []
    pairs = []
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() == ".png")
        for f in files:
            sample_id = f"{cdir.name}/{f.stem}"
            samples.append((sample_id, f, label))
            pairs.append((sample_id, sha256_file(f)))
    return class_names, samples, pairs


def _load_index(root: Path):
    index_path = root / "index.json"
    if not index_path.exists():
        raise ConfigurationError(f"dataset {root} has no index.json")
    try:
        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{index_path} is not valid JSON: {exc}") from exc
    classes = index.get("classes")
    rows = index.get("samples")
    if not isinstance(classes, list) or not classes:
        raise ConfigurationError(f"{index_path}: 'classes' must be a non-empty list")
    if not isinstance(rows, list):
        raise ConfigurationError(f"{index_path}: 'samples' must be a list")
    class_names = tuple(str(c) for c in classes)
    samples = []
    pairs = []
    for row in rows:
        try:
            sample_id = str(row["id"])
            rel = str(row["path"])
            label = int(row["label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"{index_path}: bad sample row {row!r}") from exc
        if not (0 <= label < len(class_names)):
            raise ConfigurationError(
                f"{index_path}: label {label} out of range for sample {sample_id}"
            )
        path = root / rel
        if not path.exists():
            raise ConfigurationError(f"dataset file missing: {path}")
        samples.append((sample_id, path, label))
        pairs.append((sample_id, sha256_file(path)))
    return class_names, samples, pairs


def load_dataset(root, dataset_format: str = "class-dirs") -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise ConfigurationError(f"dataset root is not a directory: {root}")
    if dataset_format == "class-dirs":
        class_names, raw, pairs = _load_class_dirs(root)
    elif dataset_format == "index":
        class_names, raw, pairs = _load_index(root)
    else:
        raise ConfigurationError(f"unknown dataset_format {dataset_format!r}")
    if not raw:
        raise ConfigurationError(f"dataset {root} contains no samples")
    seen = set()
    samples = []
    for sample_id, path, label in raw:
        if sample_id in seen:
            raise ConfigurationError(f"duplicate sample id {sample_id!r} in {root}")
        seen.add(sample_id)
        image = load_image(path)
        samples.append(LabeledSample(image=image, label=label, id=sample_id))
    return Dataset(
        samples=tuple(samples),
        class_names=class_names,
        digest=_digest_pairs(pairs),
    )


def write_dataset(samples, class_names, root) -> None:
    """Materialize samples as a class-dirs PNG tree (used to build fixtures)."""
    root = Path(root)
    for sample in samples:
        name = class_names[sample.label]
        stem = sample.id.split("/")[-1]
        save_image(sample.image, root / name / f"{stem}.png")
