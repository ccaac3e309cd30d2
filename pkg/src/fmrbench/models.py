"""Evaluated-model contract, desk-scale fixtures, and input-space wrappers.

A model adapter exposes predict (raw class scores on a [0,1] image), loss
(softmax cross-entropy at a label), and the input gradient of that loss.
Adapters apply their declared per-channel normalization internally, so the
same object serves both clean-accuracy scoring and the latent ascent loop.

Fixtures are a small MLP and a small convnet with hand-derived backprop;
training lives in fmrbench.fixtures.training.
"""

from __future__ import annotations

import json
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import AdapterError, ContractViolationError
from .perturbation import Normalization

LUMINANCE_WEIGHTS = (0.299, 0.587, 0.114)


@runtime_checkable
class EvaluatedModelInterface(Protocol):
    """Contract every evaluated-model adapter satisfies."""

    def predict(self, image: np.ndarray) -> np.ndarray: ...

    def loss(self, image: np.ndarray, label: int) -> float: ...

    def loss_and_input_gradient(
        self, image: np.ndarray, label: int
    ) -> tuple[float, np.ndarray]: ...


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores)
    e = np.exp(shifted)
    return e / e.sum()


def cross_entropy(scores: np.ndarray, label: int) -> float:
    """Softmax cross-entropy, computed stably from raw scores."""
    shifted = scores - np.max(scores)
    logz = np.log(np.sum(np.exp(shifted)))
    return float(logz - shifted[label])


class MLPModel:
    """One-hidden-layer ReLU perceptron over flattened normalized pixels."""

    kind = "mlp"

    def __init__(self, w1, b1, w2, b2, image_shape, normalization: Normalization,
                 meta: dict | None = None):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.image_shape = tuple(image_shape)
        self.normalization = normalization
        self.meta = dict(meta or {})
        if int(np.prod(self.image_shape)) != self.w1.shape[1]:
            raise ContractViolationError("MLP weight shape inconsistent with image")

    @property
    def n_classes(self) -> int:
        return self.w2.shape[0]

    def _check(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.image_shape:
            raise ContractViolationError(
                f"expected image shape {self.image_shape}, got {image.shape}"
            )
        return image

    def predict(self, image: np.ndarray) -> np.ndarray:
        image = self._check(image)
        x = self.normalization.apply(image).reshape(-1)
        h = np.maximum(self.w1 @ x + self.b1, 0.0)
        return self.w2 @ h + self.b2

    def loss(self, image: np.ndarray, label: int) -> float:
        return cross_entropy(self.predict(image), label)

    def loss_and_input_gradient(self, image, label):
        image = self._check(image)
        x = self.normalization.apply(image).reshape(-1)
        pre = self.w1 @ x + self.b1
        h = np.maximum(pre, 0.0)
        scores = self.w2 @ h + self.b2
        z = cross_entropy(scores, label)
        g_scores = softmax(scores)
        g_scores[label] -= 1.0
        g_h = self.w2.T @ g_scores
        g_pre = g_h * (pre > 0.0)
        g_x = self.w1.T @ g_pre
        g_image = self.normalization.backprop(g_x.reshape(self.image_shape))
        return z, g_image


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 same-padding convolution; x [H,W,Cin], w [Cout,Cin,3,3]."""
    hh, ww, _ = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(b, (hh, ww, b.size)).copy()
    for di in range(3):
        for dj in range(3):
            out += padded[di:di + hh, dj:dj + ww, :] @ w[:, :, di, dj].T
    return out


def _conv3x3_input_grad(g_out: np.ndarray, w: np.ndarray) -> np.ndarray:
    hh, ww, _ = g_out.shape
    cin = w.shape[1]
    g_padded = np.zeros((hh + 2, ww + 2, cin))
    for di in range(3):
        for dj in range(3):
            g_padded[di:di + hh, dj:dj + ww, :] += g_out @ w[:, :, di, dj]
    return g_padded[1:-1, 1:-1, :]


def _avgpool2(x: np.ndarray) -> np.ndarray:
    hh, ww, c = x.shape
    return x.reshape(hh // 2, 2, ww // 2, 2, c).mean(axis=(1, 3))


def _avgpool2_input_grad(g_out: np.ndarray) -> np.ndarray:
    hh, ww, c = g_out.shape
    g = np.repeat(np.repeat(g_out, 2, axis=0), 2, axis=1)
    return g / 4.0


class ConvNetModel:
    """Two conv/ReLU/avg-pool stages followed by a linear classifier."""

    kind = "convnet"

    def __init__(self, conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b,
                 image_shape, normalization: Normalization,
                 meta: dict | None = None):
        self.conv1_w = np.asarray(conv1_w, dtype=np.float64)
        self.conv1_b = np.asarray(conv1_b, dtype=np.float64)
        self.conv2_w = np.asarray(conv2_w, dtype=np.float64)
        self.conv2_b = np.asarray(conv2_b, dtype=np.float64)
        self.fc_w = np.asarray(fc_w, dtype=np.float64)
        self.fc_b = np.asarray(fc_b, dtype=np.float64)
        self.image_shape = tuple(image_shape)
        self.normalization = normalization
        self.meta = dict(meta or {})
        h, w, _ = self.image_shape
        if h % 4 or w % 4:
            raise ContractViolationError("convnet needs height/width divisible by 4")

    @property
    def n_classes(self) -> int:
        return self.fc_w.shape[0]

    def _check(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.image_shape:
            raise ContractViolationError(
                f"expected image shape {self.image_shape}, got {image.shape}"
            )
        return image

    def _forward(self, image: np.ndarray) -> dict:
        x = self.normalization.apply(image)
        pre1 = _conv3x3(x, self.conv1_w, self.conv1_b)
        act1 = np.maximum(pre1, 0.0)
        pool1 = _avgpool2(act1)
        pre2 = _conv3x3(pool1, self.conv2_w, self.conv2_b)
        act2 = np.maximum(pre2, 0.0)
        pool2 = _avgpool2(act2)
        flat = pool2.reshape(-1)
        scores = self.fc_w @ flat + self.fc_b
        return {
            "pre1": pre1, "pool1": pool1, "pre2": pre2,
            "pool2_shape": pool2.shape, "flat": flat, "scores": scores,
        }

    def predict(self, image: np.ndarray) -> np.ndarray:
        return self._forward(self._check(image))["scores"]

    def loss(self, image: np.ndarray, label: int) -> float:
        return cross_entropy(self.predict(image), label)

    def loss_and_input_gradient(self, image, label):
        image = self._check(image)
        f = self._forward(image)
        z = cross_entropy(f["scores"], label)
        g_scores = softmax(f["scores"])
        g_scores[label] -= 1.0
        g_flat = self.fc_w.T @ g_scores
        g_pool2 = g_flat.reshape(f["pool2_shape"])
        g_act2 = _avgpool2_input_grad(g_pool2)
        g_pre2 = g_act2 * (f["pre2"] > 0.0)
        g_pool1 = _conv3x3_input_grad(g_pre2, self.conv2_w)
        g_act1 = _avgpool2_input_grad(g_pool1)
        g_pre1 = g_act1 * (f["pre1"] > 0.0)
        g_x = _conv3x3_input_grad(g_pre1, self.conv1_w)
        g_image = self.normalization.backprop(g_x)
        return z, g_image


class GrayscaleWrapper:
    """Feeds the luminance of an RGB image to a single-channel model.

    Gradients flow through the conversion: each RGB channel receives the
    luminance-weighted share of the grayscale input gradient.
    """

    kind = "grayscale"

    def __init__(self, inner):
        inner_shape = getattr(inner, "image_shape", None)
        if inner_shape is None or inner_shape[2] != 1:
            raise ContractViolationError(
                "grayscale_wrap requires a single-channel inner model"
            )
        self.inner = inner
        h, w, _ = inner_shape
        self.image_shape = (h, w, 3)
        self.meta = getattr(inner, "meta", {})

    @property
    def n_classes(self) -> int:
        return self.inner.n_classes

    def _to_gray(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.image_shape:
            raise ContractViolationError(
                f"expected RGB image shape {self.image_shape}, got {image.shape}"
            )
        wts = np.asarray(LUMINANCE_WEIGHTS)
        return (image @ wts)[..., None]

    def predict(self, image: np.ndarray) -> np.ndarray:
        return self.inner.predict(self._to_gray(image))

    def loss(self, image: np.ndarray, label: int) -> float:
        return self.inner.loss(self._to_gray(image), label)

    def loss_and_input_gradient(self, image, label):
        z, g_gray = self.inner.loss_and_input_gradient(self._to_gray(image), label)
        wts = np.asarray(LUMINANCE_WEIGHTS)
        g_rgb = g_gray * wts  # [H,W,1] * [3] -> [H,W,3]
        return z, g_rgb


def grayscale_wrap(model) -> GrayscaleWrapper:
    """Wrap a 1-channel model so it accepts RGB input via luminance."""
    return GrayscaleWrapper(model)


def fgsm_init(
    image: np.ndarray, model, label: int, epsilon: float
) -> np.ndarray:
    """Fast-gradient-sign starting point: clamp(x + eps * sign(grad), 0, 1).

    sign(0) is 0, so a zero gradient leaves the image unchanged.
    """
    if not (epsilon > 0):
        raise ContractViolationError("epsilon must be > 0")
    _, grad = model.loss_and_input_gradient(np.asarray(image, dtype=np.float64), label)
    if not np.all(np.isfinite(grad)):
        raise AdapterError("fgsm_init: non-finite input gradient")
    return np.clip(image + epsilon * np.sign(grad), 0.0, 1.0)


# -- checkpoint persistence ---------------------------------------------------
# Checkpoints are .npz archives holding the weight arrays, the image shape,
# the normalization constants, and a `meta` JSON string (kind, training
# provenance, measured training accuracy).

def save_model(model, path) -> None:
    meta = dict(model.meta)
    meta["kind"] = model.kind
    common = {
        "image_shape": np.asarray(model.image_shape, dtype=np.int64),
        "norm_mean": np.asarray(model.normalization.mean, dtype=np.float64),
        "norm_scale": np.asarray(model.normalization.scale, dtype=np.float64),
        "meta": np.asarray(json.dumps(meta, sort_keys=True)),
    }
    if model.kind == "mlp":
        np.savez(path, w1=model.w1, b1=model.b1, w2=model.w2, b2=model.b2, **common)
    elif model.kind == "convnet":
        np.savez(
            path,
            conv1_w=model.conv1_w, conv1_b=model.conv1_b,
            conv2_w=model.conv2_w, conv2_b=model.conv2_b,
            fc_w=model.fc_w, fc_b=model.fc_b,
            **common,
        )
    else:
        raise ContractViolationError(f"cannot save model kind {model.kind!r}")


def load_model(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            shape = tuple(int(v) for v in z["image_shape"])
            norm = Normalization(
                mean=tuple(float(v) for v in z["norm_mean"]),
                scale=tuple(float(v) for v in z["norm_scale"]),
            )
            kind = meta.get("kind")
            if kind == "mlp":
                return MLPModel(
                    z["w1"], z["b1"], z["w2"], z["b2"], shape, norm, meta
                )
            if kind == "convnet":
                return ConvNetModel(
                    z["conv1_w"], z["conv1_b"], z["conv2_w"], z["conv2_b"],
                    z["fc_w"], z["fc_b"], shape, norm, meta,
                )
            raise AdapterError(f"unknown checkpoint kind {kind!r} in {path}")
    except (OSError, KeyError, ValueError) as exc:
        raise AdapterError(f"failed to load model checkpoint {path}: {exc}") from exc
