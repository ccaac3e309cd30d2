"""Image generator contract and the reference desk-scale generator.

A generator g(x, b) exposes encode (image to flat latent), decode (latent to
image, clamped to [0, 1]), its latent dimensionality, and a VJP that pulls a
downstream image-space gradient back to the latent. Latents are treated as
continuous 1-D float vectors during ascent.

The reference generator is a least-squares-fit linear autoencoder over the
fixture image distribution. The sparse fast path restricts ascent to a
selected subset of latent dimensions.
"""

from __future__ import annotations

import importlib
import json
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import AdapterError, ContractViolationError
from .perturbation import GRADIENT_NORM_FLOOR, latent_ascent_step


@runtime_checkable
class GeneratorInterface(Protocol):
    """Contract every generator adapter satisfies."""

    latent_dim: int

    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...

    def decode_vjp(
        self, latent: np.ndarray, image_grad: np.ndarray
    ) -> np.ndarray: ...


@dataclass(frozen=True)
class SparseMask:
    """Subset of latent dimensions allowed to move during ascent."""

    selected_dims: tuple[int, ...]
    total_dims: int

    def __post_init__(self) -> None:
        dims = self.selected_dims
        if len(set(dims)) != len(dims):
            raise ContractViolationError("mask dims must be unique")
        if any(d < 0 or d >= self.total_dims for d in dims):
            raise ContractViolationError("mask dim out of range")
        if tuple(sorted(dims)) != tuple(dims):
            object.__setattr__(self, "selected_dims", tuple(sorted(dims)))

    def __len__(self) -> int:
        return len(self.selected_dims)

    @property
    def sparsity(self) -> float:
        """Percentage of latent dimensions masked out (held fixed)."""
        return 100.0 * (self.total_dims - len(self)) / self.total_dims

    @staticmethod
    def from_weights(weights: np.ndarray, zero_threshold: float = 1e-8) -> "SparseMask":
        """Nonzero coordinates of a weight vector, float dust excluded."""
        w = np.asarray(weights)
        dims = tuple(int(i) for i in np.flatnonzero(np.abs(w) >= zero_threshold))
        return SparseMask(selected_dims=dims, total_dims=int(w.size))

    def to_dict(self) -> dict:
        return {
            "selected_dims": list(self.selected_dims),
            "total_dims": self.total_dims,
        }

    @staticmethod
    def from_dict(d: dict) -> "SparseMask":
        return SparseMask(
            selected_dims=tuple(int(i) for i in d["selected_dims"]),
            total_dims=int(d["total_dims"]),
        )


def apply_mask(
    latent: np.ndarray, base: np.ndarray, mask: SparseMask
) -> np.ndarray:
    """Combine two latents: `latent` on selected dims, `base` elsewhere."""
    latent = np.asarray(latent, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    if latent.shape != base.shape:
        raise ContractViolationError("latent/base shape mismatch")
    if latent.size != mask.total_dims:
        raise ContractViolationError("mask length mismatch")
    out = base.copy()
    idx = list(mask.selected_dims)
    out[idx] = latent[idx]
    return out


def masked_ascent_step(
    latent: np.ndarray,
    gradient: np.ndarray,
    step_size: float,
    mask: SparseMask,
) -> np.ndarray:
    """latent_ascent_step restricted to the mask's dimensions.

    Gradient normalization uses only the masked components; all other
    coordinates are returned untouched (exact equality).
    """
    latent = np.asarray(latent, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if latent.shape != gradient.shape:
        raise ContractViolationError("latent/gradient shape mismatch")
    if latent.size != mask.total_dims:
        raise ContractViolationError("mask length mismatch")
    idx = list(mask.selected_dims)
    if not idx:
        return latent.copy()
    sub = latent_ascent_step(latent[idx], gradient[idx], step_size)
    out = latent.copy()
    out[idx] = sub
    return out


class LinearAutoencoderGenerator:
    """Reference generator: a trained linear autoencoder.

    encode flattens the image and applies an affine map to a k-dim latent;
    decode applies the transposed-basis affine map back and clamps to [0, 1].
    The clamp derivative is taken as 1 strictly inside (0, 1) and 0 at or
    beyond saturation.
    """

    def __init__(
        self,
        w_enc: np.ndarray,
        b_enc: np.ndarray,
        w_dec: np.ndarray,
        b_dec: np.ndarray,
        image_shape: tuple[int, int, int],
        meta: dict | None = None,
    ):
        self.w_enc = np.asarray(w_enc, dtype=np.float64)
        self.b_enc = np.asarray(b_enc, dtype=np.float64)
        self.w_dec = np.asarray(w_dec, dtype=np.float64)
        self.b_dec = np.asarray(b_dec, dtype=np.float64)
        self.image_shape = tuple(image_shape)
        self.meta = dict(meta or {})
        k, d = self.w_enc.shape
        if self.w_dec.shape != (d, k):
            raise ContractViolationError("decoder shape inconsistent with encoder")
        if int(np.prod(self.image_shape)) != d:
            raise ContractViolationError("image shape inconsistent with weights")
        self.latent_dim = k

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.image_shape:
            raise ContractViolationError(
                f"encode: expected image shape {self.image_shape}, got {image.shape}"
            )
        return self.w_enc @ image.reshape(-1) + self.b_enc

    def _pre_clamp(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.shape != (self.latent_dim,):
            raise ContractViolationError(
                f"decode: expected latent of length {self.latent_dim}"
            )
        return self.w_dec @ latent + self.b_dec

    def decode(self, latent: np.ndarray) -> np.ndarray:
        pre = self._pre_clamp(latent)
        return np.clip(pre, 0.0, 1.0).reshape(self.image_shape)

    def decode_vjp(self, latent: np.ndarray, image_grad: np.ndarray) -> np.ndarray:
        pre = self._pre_clamp(latent)
        active = (pre > 0.0) & (pre < 1.0)
        g = np.asarray(image_grad, dtype=np.float64).reshape(-1) * active
        return self.w_dec.T @ g

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        np.savez(
            path,
            w_enc=self.w_enc,
            b_enc=self.b_enc,
            w_dec=self.w_dec,
            b_dec=self.b_dec,
            image_shape=np.asarray(self.image_shape, dtype=np.int64),
            meta=np.asarray(json.dumps(self.meta, sort_keys=True)),
        )

    @staticmethod
    def load(path) -> "LinearAutoencoderGenerator":
        with np.load(path, allow_pickle=False) as z:
            return LinearAutoencoderGenerator(
                w_enc=z["w_enc"],
                b_enc=z["b_enc"],
                w_dec=z["w_dec"],
                b_dec=z["b_dec"],
                image_shape=tuple(int(v) for v in z["image_shape"]),
                meta=json.loads(str(z["meta"])),
            )


def fit_linear_autoencoder(
    images: np.ndarray, latent_dim: int, meta: dict | None = None
) -> LinearAutoencoderGenerator:
    """Least-squares fit of the linear autoencoder on [N, H, W, C] images.

    Uses the top principal directions of the centered data, which minimize
    reconstruction MSE among linear maps. The maximum per-image train MSE is
    recorded in meta["max_train_mse"] as the fitted reconstruction bound.
    """
    images = np.asarray(images, dtype=np.float64)
    n = images.shape[0]
    shape = images.shape[1:]
    flat = images.reshape(n, -1)
    mean = flat.mean(axis=0)
    centered = flat - mean
    # SVD of the centered data; right singular vectors span the latent basis.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:latent_dim]  # [k, D]
    gen = LinearAutoencoderGenerator(
        w_enc=basis,
        b_enc=-basis @ mean,
        w_dec=basis.T,
        b_dec=mean,
        image_shape=shape,
        meta=meta,
    )
    recon = np.stack([gen.decode(gen.encode(img)) for img in images])
    per_image_mse = ((recon - images) ** 2).reshape(n, -1).mean(axis=1)
    gen.meta["max_train_mse"] = float(per_image_mse.max())
    gen.meta["mean_train_mse"] = float(per_image_mse.mean())
    gen.meta["latent_dim"] = int(latent_dim)
    return gen


class ExternalGenerator:
    """Adapter that loads a user-supplied generator implementation.

    The options dict must contain "module", an importable module exposing
    build_generator(options) -> GeneratorInterface. Heavyweight generators
    (e.g. a VQGAN service) connect through this hook; nothing in the desk
    pipeline depends on one being present.
    """

    @staticmethod
    def build(options: dict) -> GeneratorInterface:
        module_name = options.get("module")
        if not module_name:
            raise AdapterError(
                "external generator requires adapter option \"module\""
            )
        try:
            module = importlib.import_module(module_name)
            return module.build_generator(options)
        except AdapterError:
            raise
        except Exception as exc:
            raise AdapterError(f"external generator failed to load: {exc}") from exc
