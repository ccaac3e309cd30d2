"""Sparse latent-dimension selection via L1-regularized logistic regression.

Original latents (label 0) and perturbed final latents (label 1) form a
balanced binary dataset; an L1-penalized logistic model fit with a SAGA-style
stochastic proximal solver identifies which latent dimensions carry the
perturbation. The nonzero weights become the SparseMask that the masked
ascent path consumes.

Features are standardized (train-split statistics) before fitting, so the
regularization strength is comparable across latent scales. The intercept is
unpenalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolationError, InsufficientDataError, SolverError
from .generators import SparseMask
from .perturbation import PERTURBED, PerturbationOutcome

ZERO_THRESHOLD = 1e-8  # |w| below this counts as exactly zero


@dataclass
class LatentClassificationDataset:
    """Balanced 2n x d design: n original latents (0), n perturbed (1)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ContractViolationError("features must be 2-D, labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ContractViolationError("features/labels length mismatch")
        if not np.all(np.isfinite(self.features)):
            raise ContractViolationError("non-finite features")
        n_pos = int(np.sum(self.labels == 1))
        n_neg = int(np.sum(self.labels == 0))
        if n_pos != n_neg:
            raise ContractViolationError(
                f"classes must be balanced, got {n_neg} vs {n_pos}"
            )

    @property
    def n_pairs(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class SparseSelectionResult:
    """Fitted weights, the derived mask, and held-out quality."""

    weights: np.ndarray
    intercept: float
    lam: float
    mask: SparseMask
    sparsity: float  # percentage of zero weights
    heldout_score: float  # held-out accuracy, percentage
    epochs_run: int = 0
    converged: bool = False
    objective_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": "fmrbench/sparse-selection/v1",
            "weights": [float(w) for w in self.weights],
            "intercept": float(self.intercept),
            "lambda": self.lam,
            "mask": self.mask.to_dict(),
            "sparsity": self.sparsity,
            "heldout_score": self.heldout_score,
            "epochs_run": self.epochs_run,
            "converged": self.converged,
        }

    @staticmethod
    def from_dict(d: dict) -> "SparseSelectionResult":
        return SparseSelectionResult(
            weights=np.asarray(d["weights"], dtype=np.float64),
            intercept=float(d["intercept"]),
            lam=float(d["lambda"]),
            mask=SparseMask.from_dict(d["mask"]),
            sparsity=float(d["sparsity"]),
            heldout_score=float(d["heldout_score"]),
            epochs_run=int(d.get("epochs_run", 0)),
            converged=bool(d.get("converged", False)),
        )


def collect_latents(
    outcomes: Sequence[PerturbationOutcome], generator=None
) -> LatentClassificationDataset:
    """Build the balanced latent dataset from PERTURBED outcomes.

    Row order is all originals (label 0) followed by all perturbed finals
    (label 1), matching pairs in outcome order. Outcomes must carry their
    stored initial and final latents; the generator, when given, is used to
    cross-check the latent dimensionality.
    """
    perturbed = [o for o in outcomes if o.status == PERTURBED]
    if not perturbed:
        raise InsufficientDataError("no PERTURBED outcomes to collect latents from")
    originals, finals = [], []
    for o in perturbed:
        init = o.initial_latent
        if init is None:
            raise ContractViolationError(
                f"outcome {o.sample_id} has no stored initial latent"
            )
        if o.final_latent is None:
            raise ContractViolationError(
                f"outcome {o.sample_id} has no stored final latent"
            )
        originals.append(np.asarray(init, dtype=np.float64))
        finals.append(np.asarray(o.final_latent, dtype=np.float64))
    if generator is not None:
        want = getattr(generator, "latent_dim", None)
        if want is not None and originals[0].size != want:
            raise ContractViolationError("latent length does not match generator")
    features = np.vstack(originals + finals)
    labels = np.concatenate(
        [np.zeros(len(originals), dtype=np.int64), np.ones(len(finals), dtype=np.int64)]
    )
    return LatentClassificationDataset(features=features, labels=labels)


def _stratified_split(labels: np.ndarray, train_frac: float, rng):
    train_idx, test_idx = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(train_frac * idx.size))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    return np.concatenate(train_idx), np.concatenate(test_idx)


def _soft_threshold(u: np.ndarray, t: float) -> np.ndarray:
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def _sigmoid(m: float) -> float:
    if m >= 0:
        return 1.0 / (1.0 + np.exp(-m))
    e = np.exp(m)
    return e / (1.0 + e)


def _objective(xs, ys, w, b, lam) -> float:
    margins = xs @ w + b
    # log(1 + e^m) - y*m, computed stably
    losses = np.logaddexp(0.0, margins) - ys * margins
    return float(losses.mean() + lam * np.abs(w).sum())


def fit_l1_logistic(
    data: LatentClassificationDataset,
    lam: float,
    max_epochs: int = 60,
    tolerance: float = 1e-5,
    seed: int = 0,
    train_frac: float = 0.8,
) -> SparseSelectionResult:
    """Fit mean logistic loss + lam * ||w||_1 with a SAGA proximal solver.

    The solver keeps the per-sample residual table of SAGA, takes one
    soft-thresholded proximal step per visited sample, and declares
    convergence when the largest parameter change in an epoch drops below
    `tolerance`. An objective increase over 3 consecutive epochs raises
    SolverError. Data is split 80/20 (stratified, seeded) and standardized
    with train-split statistics before fitting.
    """
    if lam < 0:
        raise ContractViolationError("lambda must be >= 0")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = _stratified_split(data.labels, train_frac, rng)
    x_train_raw = data.features[train_idx]
    x_test_raw = data.features[test_idx]
    y_train = data.labels[train_idx].astype(np.float64)
    y_test = data.labels[test_idx].astype(np.float64)

    mu = x_train_raw.mean(axis=0)
    sd = x_train_raw.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)  # constant columns stay zero after centering
    xs = (x_train_raw - mu) / sd
    xs_test = (x_test_raw - mu) / sd

    n, d = xs.shape
    # Logistic loss is (1/4)-smooth in the margin; include the intercept
    # coordinate in the row norm for the step size bound.
    l_max = 0.25 * float((xs ** 2).sum(axis=1).max() + 1.0)
    gamma = 1.0 / (3.0 * max(l_max, 1e-12))

    w = np.zeros(d)
    b = 0.0
    # Residual table at the w=0 starting point: sigma(0) - y.
    alpha = 0.5 - y_train
    avg_gw = (alpha @ xs) / n
    avg_gb = float(alpha.mean())

    history: list[float] = []
    converged = False
    epochs_run = 0
    rising = 0
    for epoch in range(max_epochs):
        perm = rng.permutation(n)
        max_delta = 0.0
        for i in perm:
            xi = xs[i]
            a_new = _sigmoid(float(xi @ w) + b) - y_train[i]
            diff = a_new - alpha[i]
            gw = diff * xi + avg_gw
            gb = diff + avg_gb
            w_new = _soft_threshold(w - gamma * gw, gamma * lam)
            b_new = b - gamma * gb
            avg_gw += (diff / n) * xi
            avg_gb += diff / n
            alpha[i] = a_new
            step = max(float(np.max(np.abs(w_new - w))), abs(b_new - b))
            if step > max_delta:
                max_delta = step
            w = w_new
            b = b_new
        epochs_run = epoch + 1
        history.append(_objective(xs, y_train, w, b, lam))
        if len(history) >= 2 and history[-1] > history[-2] + 1e-12:
            rising += 1
            if rising >= 3:
                raise SolverError(
                    "objective increased over 3 consecutive epochs; "
                    f"history tail: {[round(h, 6) for h in history[-4:]]}"
                )
        else:
            rising = 0
        if max_delta < tolerance:
            converged = True
            break

    w = np.where(np.abs(w) < ZERO_THRESHOLD, 0.0, w)
    mask = SparseMask.from_weights(w, ZERO_THRESHOLD)
    sparsity = 100.0 * (d - len(mask)) / d
    preds = (xs_test @ w + b) > 0.0  # sigmoid(m) > 0.5 iff m > 0
    heldout = 100.0 * float((preds == (y_test == 1)).mean()) if y_test.size else 0.0
    return SparseSelectionResult(
        weights=w,
        intercept=b,
        lam=lam,
        mask=mask,
        sparsity=sparsity,
        heldout_score=heldout,
        epochs_run=epochs_run,
        converged=converged,
        objective_history=history,
    )


def report_sparsity(result: SparseSelectionResult, dataset_name: str) -> dict:
    """One summary row: dataset, percentage masked, held-out score."""
    return {
        "dataset": dataset_name,
        "sparsity": round(result.sparsity, 2),
        "heldout_score": round(result.heldout_score, 2),
    }


def save_selection(
    result: SparseSelectionResult, path, generator_name: str, dataset_name: str
) -> None:
    """Persist a fitted selection keyed by generator and dataset names."""
    payload = result.to_dict()
    payload["generator"] = generator_name
    payload["dataset"] = dataset_name
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_selection(path) -> tuple[SparseSelectionResult, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return SparseSelectionResult.from_dict(payload), {
        "generator": payload.get("generator"),
        "dataset": payload.get("dataset"),
    }
