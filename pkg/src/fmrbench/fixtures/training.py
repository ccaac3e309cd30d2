"""Offline training for the desk-scale fixtures.

Plain numpy: batched forward/backward passes with hand-derived weight
gradients and an Adam optimizer. Every routine is fully seed-determined and
records its measured training accuracy in the returned model's meta, which
checkpoints then freeze.
"""

from __future__ import annotations

import numpy as np

from ..models import ConvNetModel, MLPModel
from ..perturbation import LabeledSample, Normalization

GLYPH_NORMALIZATION = Normalization(mean=(0.5,), scale=(0.5,))


def stack_images(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([s.image for s in samples]).astype(np.float64)
    ys = np.asarray([s.label for s in samples], dtype=np.int64)
    return xs, ys


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _ce_grad(scores: np.ndarray, ys: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and d loss / d scores."""
    n = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float((logz - shifted[np.arange(n), ys]).mean())
    g = _softmax_rows(scores)
    g[np.arange(n), ys] -= 1.0
    return loss, g / n


# -- MLP ----------------------------------------------------------------------

def _mlp_forward(xn: np.ndarray, w1, b1, w2, b2):
    pre = xn @ w1.T + b1
    h = np.maximum(pre, 0.0)
    scores = h @ w2.T + b2
    return pre, h, scores


def train_mlp(
    samples: list[LabeledSample],
    n_classes: int = 10,
    normalization: Normalization = GLYPH_NORMALIZATION,
    hidden: int = 64,
    epochs: int = 30,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    meta: dict | None = None,
) -> MLPModel:
    """Train a one-hidden-layer ReLU classifier on raw [0,1] images."""
    rng = np.random.default_rng(seed)
    xs, ys = stack_images(samples)
    n = xs.shape[0]
    image_shape = xs.shape[1:]
    xn = normalization.apply(xs).reshape(n, -1)
    d = xn.shape[1]

    w1 = rng.normal(0.0, np.sqrt(2.0 / d), size=(hidden, d))
    b1 = np.zeros(hidden)
    w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(n_classes, hidden))
    b2 = np.zeros(n_classes)
    opt = _Adam([w1, b1, w2, b2], lr=lr)

    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            xb, yb = xn[idx], ys[idx]
            pre, h, scores = _mlp_forward(xb, w1, b1, w2, b2)
            _, g_scores = _ce_grad(scores, yb)
            g_w2 = g_scores.T @ h
            g_b2 = g_scores.sum(axis=0)
            g_h = g_scores @ w2
            g_pre = g_h * (pre > 0.0)
            g_w1 = g_pre.T @ xb
            g_b1 = g_pre.sum(axis=0)
            opt.step([g_w1, g_b1, g_w2, g_b2])

    model_meta = dict(meta or {})
    model_meta.update({"seed": seed, "epochs": epochs, "hidden": hidden})
    model = MLPModel(w1, b1, w2, b2, image_shape, normalization, model_meta)
    model.meta["train_accuracy"] = model_accuracy(model, samples)
    return model


def train_mlp_pgd(
    samples: list[LabeledSample],
    n_classes: int = 10,
    normalization: Normalization = GLYPH_NORMALIZATION,
    hidden: int = 64,
    epochs: int = 30,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    bound: float = 0.03,
    attack_steps: int = 7,
    meta: dict | None = None,
) -> MLPModel:
    """Adversarially train the MLP with an iterative sign-ascent inner loop.

    Each batch is replaced by PGD examples: random start inside the l-inf
    ball of radius `bound`, then `attack_steps` steps of sign ascent with
    step 2.5 * bound / attack_steps, projected back to the ball and to the
    valid pixel range.
    """
    rng = np.random.default_rng(seed)
    xs, ys = stack_images(samples)
    n = xs.shape[0]
    image_shape = xs.shape[1:]
    d = int(np.prod(image_shape))
    flat = xs.reshape(n, -1)

    w1 = rng.normal(0.0, np.sqrt(2.0 / d), size=(hidden, d))
    b1 = np.zeros(hidden)
    w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(n_classes, hidden))
    b2 = np.zeros(n_classes)
    opt = _Adam([w1, b1, w2, b2], lr=lr)

    mean = np.asarray(normalization.mean)
    scale = np.asarray(normalization.scale)
    norm_flat_scale = np.broadcast_to(scale, image_shape).reshape(-1)
    norm_flat_mean = np.broadcast_to(mean, image_shape).reshape(-1)
    alpha = 2.5 * bound / attack_steps

    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            x0, yb = flat[idx], ys[idx]
            xb = np.clip(
                x0 + rng.uniform(-bound, bound, size=x0.shape), 0.0, 1.0
            )
            for _ in range(attack_steps):
                xnb = (xb - norm_flat_mean) / norm_flat_scale
                pre, h, scores = _mlp_forward(xnb, w1, b1, w2, b2)
                _, g_scores = _ce_grad(scores, yb)
                g_h = g_scores @ w2
                g_pre = g_h * (pre > 0.0)
                g_xn = g_pre @ w1
                g_x = g_xn / norm_flat_scale
                xb = xb + alpha * np.sign(g_x)
                xb = np.clip(xb, x0 - bound, x0 + bound)
                xb = np.clip(xb, 0.0, 1.0)
            xnb = (xb - norm_flat_mean) / norm_flat_scale
            pre, h, scores = _mlp_forward(xnb, w1, b1, w2, b2)
            _, g_scores = _ce_grad(scores, yb)
            g_w2 = g_scores.T @ h
            g_b2 = g_scores.sum(axis=0)
            g_h = g_scores @ w2
            g_pre = g_h * (pre > 0.0)
            g_w1 = g_pre.T @ xnb
            g_b1 = g_pre.sum(axis=0)
            opt.step([g_w1, g_b1, g_w2, g_b2])

    model_meta = dict(meta or {})
    model_meta.update({"seed": seed, "epochs": epochs, "hidden": hidden,
                       "pgd_bound": bound, "pgd_steps": attack_steps})
    model = MLPModel(w1, b1, w2, b2, image_shape, normalization, model_meta)
    model.meta["train_accuracy"] = model_accuracy(model, samples)
    return model


# -- convnet ------------------------------------------------------------------

def _conv_forward_batch(x, w, b):
    n, hh, ww, _ = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(b, (n, hh, ww, b.size)).copy()
    for di in range(3):
        for dj in range(3):
            out += padded[:, di:di + hh, dj:dj + ww, :] @ w[:, :, di, dj].T
    return out


def _conv_backward_batch(g_out, x, w):
    """Returns (g_x, g_w, g_b) for a batched 3x3 same convolution."""
    n, hh, ww, _ = g_out.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    g_padded = np.zeros_like(padded)
    g_w = np.zeros_like(w)
    for di in range(3):
        for dj in range(3):
            patch = padded[:, di:di + hh, dj:dj + ww, :]
            g_w[:, :, di, dj] = np.einsum("nhwo,nhwi->oi", g_out, patch)
            g_padded[:, di:di + hh, dj:dj + ww, :] += g_out @ w[:, :, di, dj]
    g_b = g_out.sum(axis=(0, 1, 2))
    return g_padded[:, 1:-1, 1:-1, :], g_w, g_b


def _pool_forward_batch(x):
    n, hh, ww, c = x.shape
    return x.reshape(n, hh // 2, 2, ww // 2, 2, c).mean(axis=(2, 4))


def _pool_backward_batch(g_out):
    g = np.repeat(np.repeat(g_out, 2, axis=1), 2, axis=2)
    return g / 4.0


def train_convnet(
    samples: list[LabeledSample],
    n_classes: int = 10,
    normalization: Normalization = GLYPH_NORMALIZATION,
    f1: int = 8,
    f2: int = 16,
    epochs: int = 12,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    meta: dict | None = None,
) -> ConvNetModel:
    """Train the two-stage convnet on raw [0,1] images."""
    rng = np.random.default_rng(seed)
    xs, ys = stack_images(samples)
    n = xs.shape[0]
    image_shape = xs.shape[1:]
    hh, ww, c = image_shape
    xn_all = normalization.apply(xs)

    conv1_w = rng.normal(0.0, np.sqrt(2.0 / (9 * c)), size=(f1, c, 3, 3))
    conv1_b = np.zeros(f1)
    conv2_w = rng.normal(0.0, np.sqrt(2.0 / (9 * f1)), size=(f2, f1, 3, 3))
    conv2_b = np.zeros(f2)
    flat_dim = (hh // 4) * (ww // 4) * f2
    fc_w = rng.normal(0.0, np.sqrt(2.0 / flat_dim), size=(n_classes, flat_dim))
    fc_b = np.zeros(n_classes)
    opt = _Adam([conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b], lr=lr)

    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            xb, yb = xn_all[idx], ys[idx]
            nb = xb.shape[0]

            pre1 = _conv_forward_batch(xb, conv1_w, conv1_b)
            act1 = np.maximum(pre1, 0.0)
            pool1 = _pool_forward_batch(act1)
            pre2 = _conv_forward_batch(pool1, conv2_w, conv2_b)
            act2 = np.maximum(pre2, 0.0)
            pool2 = _pool_forward_batch(act2)
            flat = pool2.reshape(nb, -1)
            scores = flat @ fc_w.T + fc_b

            _, g_scores = _ce_grad(scores, yb)
            g_fc_w = g_scores.T @ flat
            g_fc_b = g_scores.sum(axis=0)
            g_flat = g_scores @ fc_w
            g_pool2 = g_flat.reshape(pool2.shape)
            g_act2 = _pool_backward_batch(g_pool2)
            g_pre2 = g_act2 * (pre2 > 0.0)
            g_pool1, g_conv2_w, g_conv2_b = _conv_backward_batch(
                g_pre2, pool1, conv2_w
            )
            g_act1 = _pool_backward_batch(g_pool1)
            g_pre1 = g_act1 * (pre1 > 0.0)
            _, g_conv1_w, g_conv1_b = _conv_backward_batch(g_pre1, xb, conv1_w)
            opt.step([g_conv1_w, g_conv1_b, g_conv2_w, g_conv2_b, g_fc_w, g_fc_b])

    model_meta = dict(meta or {})
    model_meta.update({"seed": seed, "epochs": epochs, "filters": [f1, f2]})
    model = ConvNetModel(
        conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b,
        image_shape, normalization, model_meta,
    )
    model.meta["train_accuracy"] = model_accuracy(model, samples)
    return model


def model_accuracy(model, samples: list[LabeledSample]) -> float:
    """Plain top-1 accuracy of a fitted model over a sample list, in [0, 1]."""
    correct = 0
    for s in samples:
        if int(np.argmax(model.predict(s.image))) == s.label:
            correct += 1
    return correct / len(samples)
