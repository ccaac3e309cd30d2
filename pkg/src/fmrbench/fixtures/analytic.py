"""Analytic 1-pixel fixture: every quantity is hand-computable.

The image is a single pixel, the latent is that pixel value, the model's
loss is a signed linear function of it, and the oracle accepts while the
pixel stays below a threshold. With step size s the ascent walks the pixel
in fixed increments, so the whole perturbation trace can be replayed by
hand and compared exactly.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolationError
from ..oracles import Classification, LabelSet, top_class

PIXEL_SHAPE = (1, 1, 1)


class IdentityGenerator:
    """Latent equals the pixel value; decode clamps to [0, 1]."""

    latent_dim = 1

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != PIXEL_SHAPE:
            raise ContractViolationError("identity generator expects a 1x1x1 image")
        return image.reshape(1).copy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.shape != (1,):
            raise ContractViolationError("identity generator expects a length-1 latent")
        return np.clip(latent, 0.0, 1.0).reshape(PIXEL_SHAPE)

    def decode_vjp(self, latent: np.ndarray, image_grad: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64).reshape(1)
        active = (latent > 0.0) & (latent < 1.0)
        return np.asarray(image_grad, dtype=np.float64).reshape(1) * active


class SignedLinearModel:
    """Two-class model with loss = -sign(label) * pixel.

    Class 0 carries sign +1 and class 1 carries sign -1, so a label-1 sample
    has loss equal to the pixel value and a constant +1 loss gradient: ascent
    walks the pixel upward by exactly step_size per iteration.
    """

    image_shape = PIXEL_SHAPE
    n_classes = 2

    @staticmethod
    def _sign(label: int) -> float:
        if label not in (0, 1):
            raise ContractViolationError("signed linear model has two classes")
        return 1.0 if label == 0 else -1.0

    def predict(self, image: np.ndarray) -> np.ndarray:
        pixel = float(np.asarray(image).reshape(-1)[0])
        return np.array([-pixel, pixel])

    def loss(self, image: np.ndarray, label: int) -> float:
        pixel = float(np.asarray(image).reshape(-1)[0])
        return -self._sign(label) * pixel

    def loss_and_input_gradient(self, image, label):
        z = self.loss(image, label)
        grad = np.full(PIXEL_SHAPE, -self._sign(label))
        return z, grad


class ThresholdOracle:
    """Accepts the designated class while the mean pixel stays at or below
    a threshold; above it, the prediction flips to the other class."""

    def __init__(self, threshold: float, accept_class: int = 1,
                 label_set: LabelSet | None = None):
        self.threshold = float(threshold)
        self.accept_class = int(accept_class)
        self.label_set = label_set or LabelSet(names=("inside", "outside"))
        if self.accept_class >= len(self.label_set):
            raise ContractViolationError("accept_class outside label set")

    def classify(self, image: np.ndarray) -> Classification:
        value = float(np.asarray(image, dtype=np.float64).mean())
        k = len(self.label_set)
        scores = np.zeros(k)
        if value <= self.threshold:
            scores[self.accept_class] = 1.0
        else:
            scores[(self.accept_class + 1) % k] = 1.0
        return Classification(predicted_class=top_class(scores), score_vector=scores)

    def verify(self, image: np.ndarray, label: int) -> bool:
        return self.classify(image).predicted_class == label
