"""Shared analytic fixtures and check utilities for the test suite.

The one-pixel fixture family makes the ascent loop fully hand-replayable:
the generator is the identity on a single pixel, the evaluated model's loss
IS the pixel value (gradient +1 everywhere), and the oracle accepts any
image whose pixel is at or below a threshold. Every trace entry can then be
predicted with plain float arithmetic.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from fmrbench import (
    ORIGINAL_KEPT,
    PERTURBED,
    LabeledSample,
    PerturbationConfig,
)

ROOT = Path(__file__).resolve().parents[1]
DATA_EVAL = ROOT / "data" / "glyphs-eval-1000"
DATA_MINI = ROOT / "data" / "glyphs-mini-100"


class IdentityGenerator:
    """Latent space == pixel space for a (1, 1, 1) image."""

    image_shape = (1, 1, 1)
    latent_dim = 1

    def encode(self, image):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.image_shape:
            raise ValueError(f"expected {self.image_shape}, got {image.shape}")
        return image.reshape(-1).copy()

    def decode(self, latent):
        latent = np.asarray(latent, dtype=np.float64)
        return np.clip(latent.reshape(self.image_shape), 0.0, 1.0)

    def decode_vjp(self, latent, image_grad):
        latent = np.asarray(latent, dtype=np.float64)
        pre = latent.reshape(-1)
        active = (pre > 0.0) & (pre < 1.0)
        return np.asarray(image_grad, dtype=np.float64).reshape(-1) * active


class PixelLossModel:
    """Loss is the raw pixel value; its input gradient is exactly +1.

    predict scores class 1 above class 0 once the pixel exceeds `boundary`,
    which gives metric tests a knob independent of the loss.
    """

    image_shape = (1, 1, 1)
    n_classes = 2

    def __init__(self, boundary: float = 0.75):
        self.boundary = boundary

    def _pixel(self, image) -> float:
        return float(np.asarray(image, dtype=np.float64).reshape(-1)[0])

    def predict(self, image):
        v = self._pixel(image)
        return np.array([self.boundary - v, v - self.boundary])

    def loss(self, image, label):
        v = self._pixel(image)
        return v if label == 1 else -v

    def loss_and_input_gradient(self, image, label):
        sign = 1.0 if label == 1 else -1.0
        grad = np.full(self.image_shape, sign, dtype=np.float64)
        return self.loss(image, label), grad


class ThresholdOracle:
    """Accepts any image whose pixel value is <= threshold."""

    def __init__(self, threshold: float):
        self.threshold = threshold

    def verify(self, image, label) -> bool:
        v = float(np.asarray(image).reshape(-1)[0])
        return v <= self.threshold

    def classify(self, image):
        from fmrbench import Classification

        v = float(np.asarray(image).reshape(-1)[0])
        accepted = v <= self.threshold
        scores = np.array([0.0, 1.0]) if accepted else np.array([1.0, 0.0])
        return Classification(predicted_class=int(np.argmax(scores)), score_vector=scores)


def one_pixel_sample(value: float, label: int = 1, sample_id: str = "px") -> LabeledSample:
    image = np.full((1, 1, 1), value, dtype=np.float64)
    return LabeledSample(image=image, label=label, id=sample_id)


def replay_one_pixel(start: float, step_size: float, threshold: float, budget: int):
    """Hand replay of the ascent loop for the one-pixel fixture (label 1).

    Returns a dict with the expected trace tuples
    (iteration, loss, verdict, accepted, step_norm), the final pixel value,
    the accepted-iteration count, and the status. Float arithmetic mirrors
    the production loop operation for operation, so comparisons can demand
    exact equality.
    """
    entries = []
    cur = float(start)
    accepted = 0
    final = float(start)
    for t in range(budget):
        cand = cur + (step_size / 1.0) * 1.0
        step_norm = abs(cand - cur)
        pixel = min(max(cand, 0.0), 1.0)
        verdict = pixel <= threshold
        entries.append((t, pixel, verdict, verdict, step_norm))
        if not verdict:
            break
        accepted = t + 1
        final = pixel
        cur = cand
    status = PERTURBED if accepted > 0 else ORIGINAL_KEPT
    return {
        "entries": entries,
        "final": final if accepted > 0 else float(start),
        "accepted_iterations": accepted,
        "status": status,
    }


def assert_trace_matches(outcome, expected) -> None:
    assert outcome.status == expected["status"]
    assert outcome.accepted_iterations == expected["accepted_iterations"]
    assert len(outcome.trace) == len(expected["entries"])
    for entry, (it, loss, verdict, accepted, step_norm) in zip(
        outcome.trace, expected["entries"]
    ):
        assert entry.iteration == it
        assert entry.loss_value == loss
        assert entry.oracle_verdict == verdict
        assert entry.accepted == accepted
        assert entry.latent_step_norm == step_norm
    if expected["status"] == PERTURBED:
        assert float(outcome.final_image.reshape(-1)[0]) == expected["final"]


def default_config(budget: int = 50, step_size: float = 0.1, seed: int = 0) -> PerturbationConfig:
    return PerturbationConfig(budget=budget, step_size=step_size, seed=seed)


def finite_difference_input_error(model, image, label, n_coords=10, h=1e-5, seed=0):
    """Worst relative error between analytic and central-difference gradients."""
    image = np.asarray(image, dtype=np.float64)
    _, grad = model.loss_and_input_gradient(image, label)
    grad = np.asarray(grad).reshape(-1)
    rng = np.random.default_rng(seed)
    coords = rng.choice(image.size, size=min(n_coords, image.size), replace=False)
    worst = 0.0
    for c in coords:
        bump = np.zeros(image.size)
        bump[c] = h
        bump = bump.reshape(image.shape)
        fd = (model.loss(image + bump, label) - model.loss(image - bump, label)) / (2 * h)
        denom = max(abs(fd), abs(grad[c]), 1e-8)
        worst = max(worst, abs(fd - grad[c]) / denom)
    return worst


def finite_difference_decode_error(
    generator, latent, n_coords=10, h=1e-5, seed=0, weight=None
):
    """Worst relative error of decode_vjp against central differences.

    Checks the vector-Jacobian product on the scalar map
    f(latent) = <decode(latent), G> for a fixed random G. Callers probing a
    clamping decoder pass `weight` as G with zeros at pixels near the clamp
    kinks, where two-sided differences are not valid.
    """
    latent = np.asarray(latent, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if weight is None:
        g_image = rng.normal(size=generator.decode(latent).shape)
    else:
        g_image = np.asarray(weight, dtype=np.float64)
    grad = np.asarray(generator.decode_vjp(latent, g_image)).reshape(-1)

    def f(z):
        return float(np.sum(generator.decode(z) * g_image))

    coords = rng.choice(latent.size, size=min(n_coords, latent.size), replace=False)
    worst = 0.0
    for c in coords:
        bump = np.zeros(latent.size)
        bump[c] = h
        fd = (f(latent + bump) - f(latent - bump)) / (2 * h)
        denom = max(abs(fd), abs(grad[c]), 1e-8)
        worst = max(worst, abs(fd - grad[c]) / denom)
    return worst
