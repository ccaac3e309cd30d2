"""Procedural 10-class glyph dataset (MNIST-like, 16x16 grayscale).

Each class is a 5x7 dot-matrix digit rendered onto a 16x16 canvas with
per-sample position jitter, intensity variation, and additive Gaussian pixel
noise. Everything is derived from a seed, so any split can be regenerated
exactly; the repo's data/ directories are frozen renders of specific seeds.
"""

from __future__ import annotations

import numpy as np

from ..oracles import LabelSet
from ..perturbation import LabeledSample

CLASS_NAMES = (
    "zero", "one", "two", "three", "four",
    "five", "six", "seven", "eight", "nine",
)

_BITMAPS = {
    "zero": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "one": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "two": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "three": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "four": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "five": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "six": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "seven": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "eight": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "nine": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

IMAGE_SIZE = 16
GLYPH_ROWS = 7
GLYPH_COLS = 5


def label_set() -> LabelSet:
    return LabelSet(names=CLASS_NAMES)


def _template(name: str) -> np.ndarray:
    rows = _BITMAPS[name]
    return np.array([[float(ch) for ch in row] for row in rows])


def render_glyph(
    label: int,
    rng: np.random.Generator,
    noise_sigma: float = 0.15,
    jitter: int = 2,
    intensity_range: tuple[float, float] = (0.65, 1.0),
) -> np.ndarray:
    """One noisy glyph image, float [16, 16, 1] in [0, 1]."""
    canvas = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    base_r = (IMAGE_SIZE - GLYPH_ROWS) // 2
    base_c = (IMAGE_SIZE - GLYPH_COLS) // 2
    dr = int(rng.integers(-jitter, jitter + 1))
    dc = int(rng.integers(-jitter, jitter + 1))
    intensity = float(rng.uniform(*intensity_range))
    r0, c0 = base_r + dr, base_c + dc
    canvas[r0:r0 + GLYPH_ROWS, c0:c0 + GLYPH_COLS] = (
        intensity * _template(CLASS_NAMES[label])
    )
    if noise_sigma > 0:
        canvas = canvas + rng.normal(0.0, noise_sigma, canvas.shape)
    return np.clip(canvas, 0.0, 1.0)[..., None]


def make_dataset(
    n_per_class: int,
    seed: int,
    noise_sigma: float = 0.15,
    jitter: int = 2,
    intensity_range: tuple[float, float] = (0.65, 1.0),
) -> list[LabeledSample]:
    """n_per_class samples of each of the 10 classes, fully seed-determined."""
    rng = np.random.default_rng(seed)
    samples = []
    for label, name in enumerate(CLASS_NAMES):
        for i in range(n_per_class):
            image = render_glyph(
                label, rng,
                noise_sigma=noise_sigma,
                jitter=jitter,
                intensity_range=intensity_range,
            )
            samples.append(
                LabeledSample(image=image, label=label, id=f"{name}/{i:04d}")
            )
    return samples
