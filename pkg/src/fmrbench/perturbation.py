"""Oracle-constrained counterfactual perturbation.

Implements the core generation loop: starting from a sample (x, y), repeatedly
take a gradient-ascent step in the generator's latent space so as to increase
the evaluated model's classification loss, decode, and keep the step only while
a zero-shot oracle still assigns the image its original label. The first oracle
rejection rolls back to the last accepted iterate and stops. If the very first
perturbation is rejected, the original image is emitted unchanged.

Each generator step consumes one unit of the iteration budget B, including the
step that produces the initial candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .errors import AdapterError, ConfigurationError, ContractViolationError

if TYPE_CHECKING:
    from .generators import GeneratorInterface, SparseMask
    from .models import EvaluatedModelInterface
    from .oracles import OracleInterface


# Outcome status literals.
ORIGINAL_KEPT = "ORIGINAL_KEPT"
PERTURBED = "PERTURBED"
# A sample aborted because the loss or gradient became non-finite. Such
# outcomes are recorded but excluded from PA (both sides) and from the VR
# denominator.
DIAGNOSTIC_ABORT = "DIAGNOSTIC_ABORT"

GRADIENT_NORM_FLOOR = 1e-12

# Channel statistics used to center and re-scale color values before the
# evaluated model (and, unless an adapter declares its own, the oracle).
DEFAULT_RGB_MEAN = (0.485, 0.456, 0.406)
DEFAULT_RGB_SCALE = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class Normalization:
    """Per-channel centering and re-scaling applied before model input."""

    mean: tuple[float, ...] = DEFAULT_RGB_MEAN
    scale: tuple[float, ...] = DEFAULT_RGB_SCALE

    def __post_init__(self) -> None:
        if len(self.mean) != len(self.scale):
            raise ContractViolationError("normalization mean/scale length mismatch")
        if any(s <= 0 for s in self.scale):
            raise ContractViolationError("normalization scale must be positive")

    @property
    def channels(self) -> int:
        return len(self.mean)

    def apply(self, image: np.ndarray) -> np.ndarray:
        if image.shape[-1] != self.channels:
            raise ContractViolationError(
                f"image has {image.shape[-1]} channels, "
                f"normalization expects {self.channels}"
            )
        mean = np.asarray(self.mean, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        return (image - mean) / scale

    def backprop(self, grad_normalized: np.ndarray) -> np.ndarray:
        scale = np.asarray(self.scale, dtype=np.float64)
        return grad_normalized / scale

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "scale": list(self.scale)}

    @staticmethod
    def from_dict(d: dict) -> "Normalization":
        return Normalization(mean=tuple(d["mean"]), scale=tuple(d["scale"]))


@dataclass(frozen=True)
class LabeledSample:
    """An image with its class label; the (x, y) pair being perturbed."""

    image: np.ndarray  # float array [H, W, C], values in [0, 1]
    label: int
    id: str

    def validate(self, n_classes: int | None = None) -> None:
        img = self.image
        if img.ndim != 3:
            raise ContractViolationError(f"sample {self.id}: image must be [H,W,C]")
        if not np.all(np.isfinite(img)):
            raise ContractViolationError(f"sample {self.id}: non-finite pixels")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ContractViolationError(f"sample {self.id}: pixels outside [0,1]")
        if self.label < 0 or (n_classes is not None and self.label >= n_classes):
            raise ContractViolationError(f"sample {self.id}: label out of range")


@dataclass(frozen=True)
class PerturbationConfig:
    """Knobs of the generation loop.

    budget is the total number of generator iterations allowed per sample (B);
    the step producing the initial candidate consumes the first unit.
    """

    budget: int = 50
    step_size: float = 0.001
    normalization: Normalization = field(default_factory=Normalization)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ContractViolationError("budget must be >= 1")
        if not (self.step_size > 0):
            raise ContractViolationError("step_size must be > 0")

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "step_size": self.step_size,
            "normalization": self.normalization.to_dict(),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "PerturbationConfig":
        return PerturbationConfig(
            budget=int(d.get("budget", 50)),
            step_size=float(d.get("step_size", 0.001)),
            normalization=Normalization.from_dict(
                d.get(
                    "normalization",
                    {"mean": DEFAULT_RGB_MEAN, "scale": DEFAULT_RGB_SCALE},
                )
            ),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class TraceEntry:
    """One generator iteration: the candidate's loss and the oracle's verdict."""

    iteration: int  # 0-based; iteration t produced candidate x_hat_t
    loss_value: float  # z = l(theta(x_hat_t), y) at this iteration's candidate
    oracle_verdict: bool
    accepted: bool
    latent_step_norm: float


@dataclass
class PerturbationOutcome:
    """Result of perturbing one sample."""

    sample_id: str
    label: int
    final_image: np.ndarray
    status: str  # ORIGINAL_KEPT | PERTURBED | DIAGNOSTIC_ABORT
    accepted_iterations: int
    trace: list[TraceEntry]
    diagnostic: str | None = None
    initial_latent: np.ndarray | None = None
    final_latent: np.ndarray | None = None


def latent_ascent_step(
    latent: np.ndarray, gradient: np.ndarray, step_size: float
) -> np.ndarray:
    """One unit-normalized gradient-ascent step in latent space.

    Returns latent + step_size * gradient / ||gradient||. A gradient with norm
    below 1e-12 leaves the latent unchanged, so stationary points are fixed
    points. The applied step always has non-negative inner product with the
    gradient.
    """
    latent = np.asarray(latent, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if latent.shape != gradient.shape:
        raise ContractViolationError(
            f"latent/gradient shape mismatch: {latent.shape} vs {gradient.shape}"
        )
    if not (step_size > 0):
        raise ContractViolationError("step_size must be > 0")
    norm = float(np.linalg.norm(gradient))
    if norm < GRADIENT_NORM_FLOOR:
        return latent.copy()
    return latent + (step_size / norm) * gradient


def latent_loss_and_gradient(
    latent: np.ndarray,
    model: "EvaluatedModelInterface",
    generator: "GeneratorInterface",
    label: int,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and its latent gradient through the composed map model(decode(.)).

    Returns (loss, d loss / d latent, decoded image). Model adapters apply
    their own input normalization internally, so the chain seen here is
    model o normalize o decode.
    """
    image = generator.decode(latent)
    loss, image_grad = model.loss_and_input_gradient(image, label)
    latent_grad = generator.decode_vjp(latent, image_grad)
    return loss, latent_grad, image


def perturb_sample(
    sample: LabeledSample,
    model: "EvaluatedModelInterface",
    generator: "GeneratorInterface",
    oracle: "OracleInterface",
    config: PerturbationConfig,
    mask: "SparseMask | None" = None,
    initial_image: np.ndarray | None = None,
) -> PerturbationOutcome:
    """Generate an oracle-constrained counterfactual for one sample.

    The loop encodes the sample, then takes up to config.budget generator
    steps. Each step moves the latent along the normalized loss gradient, the
    candidate is decoded and shown to the oracle, and the first rejection
    rolls back to the previous accepted iterate and stops. Rejection of the
    very first candidate emits the original image (status ORIGINAL_KEPT).

    Args:
        sample: the (x, y) pair to perturb.
        mask: optional sparse latent mask; when given, ascent moves only the
            selected dimensions (normalization over those components only).
        initial_image: optional replacement starting image for the encoder
            (e.g. an adversarially initialized copy of sample.image); the
            emitted image on immediate rejection is still sample.image.

    Raises:
        AdapterError: a generator or oracle call failed; the sample id is
            attached to the message.
    """
    from .generators import masked_ascent_step  # local import avoids a cycle

    sample.validate()
    start = sample.image if initial_image is None else initial_image
    trace: list[TraceEntry] = []

    def _abort(reason: str) -> PerturbationOutcome:
        return PerturbationOutcome(
            sample_id=sample.id,
            label=sample.label,
            final_image=sample.image.copy(),
            status=DIAGNOSTIC_ABORT,
            accepted_iterations=0,
            trace=trace,
            diagnostic=reason,
        )

    try:
        current_latent = np.asarray(generator.encode(start), dtype=np.float64)
    except ContractViolationError:
        raise
    except Exception as exc:  # adapter failures carry the sample id
        raise AdapterError(f"encode failed for sample {sample.id}: {exc}") from exc
    initial_latent = current_latent.copy()

    accepted_latent: np.ndarray | None = None
    accepted_image: np.ndarray | None = None
    accepted_count = 0

    # Loss and gradient at the current iterate guide the next step; the loss
    # recorded in the trace is the one evaluated at the produced candidate.
    loss_cur, grad_cur, _ = _guarded_loss_grad(
        current_latent, model, generator, sample
    )
    if loss_cur is None:
        return _abort(f"non-finite loss/gradient at start: {grad_cur}")

    for t in range(config.budget):
        if mask is None:
            candidate_latent = latent_ascent_step(
                current_latent, grad_cur, config.step_size
            )
        else:
            candidate_latent = masked_ascent_step(
                current_latent, grad_cur, config.step_size, mask
            )
        step_norm = float(np.linalg.norm(candidate_latent - current_latent))

        try:
            candidate_image = generator.decode(candidate_latent)
            verdict = bool(oracle.verify(candidate_image, sample.label))
        except ContractViolationError:
            raise
        except Exception as exc:
            raise AdapterError(
                f"decode/verify failed for sample {sample.id} at iteration {t}: {exc}"
            ) from exc

        if verdict and t + 1 < config.budget:
            # The next step needs the gradient here anyway; reuse the loss.
            loss_cand, grad_cand, _ = _guarded_loss_grad(
                candidate_latent, model, generator, sample
            )
            if loss_cand is None:
                return _abort(
                    f"non-finite loss/gradient at iteration {t}: {grad_cand}"
                )
        else:
            try:
                loss_cand = float(model.loss(candidate_image, sample.label))
            except Exception as exc:
                raise AdapterError(
                    f"loss failed for sample {sample.id} at iteration {t}: {exc}"
                ) from exc
            grad_cand = None
            if not math.isfinite(loss_cand):
                return _abort(f"non-finite loss at iteration {t}")

        trace.append(
            TraceEntry(
                iteration=t,
                loss_value=loss_cand,
                oracle_verdict=verdict,
                accepted=verdict,
                latent_step_norm=step_norm,
            )
        )

        if not verdict:
            break  # roll back to the last accepted iterate
        accepted_latent = candidate_latent
        accepted_image = candidate_image
        accepted_count = t + 1
        current_latent = candidate_latent
        if grad_cand is not None:
            loss_cur, grad_cur = loss_cand, grad_cand

    if accepted_count == 0:
        return PerturbationOutcome(
            sample_id=sample.id,
            label=sample.label,
            final_image=sample.image.copy(),
            status=ORIGINAL_KEPT,
            accepted_iterations=0,
            trace=trace,
            initial_latent=initial_latent,
            final_latent=initial_latent.copy(),
        )
    assert accepted_image is not None and accepted_latent is not None
    return PerturbationOutcome(
        sample_id=sample.id,
        label=sample.label,
        final_image=accepted_image.copy(),
        status=PERTURBED,
        accepted_iterations=accepted_count,
        trace=trace,
        initial_latent=initial_latent,
        final_latent=accepted_latent.copy(),
    )


def _guarded_loss_grad(latent, model, generator, sample):
    """latent_loss_and_gradient with non-finite detection and id-tagged errors."""
    try:
        loss, grad, image = latent_loss_and_gradient(
            latent, model, generator, sample.label
        )
    except ContractViolationError:
        raise
    except Exception as exc:
        raise AdapterError(
            f"loss/gradient failed for sample {sample.id}: {exc}"
        ) from exc
    if not math.isfinite(loss):
        return None, "loss", None
    if not np.all(np.isfinite(grad)):
        return None, "gradient", None
    return float(loss), np.asarray(grad, dtype=np.float64), image


def perturb_dataset(
    dataset: Sequence[LabeledSample],
    model: "EvaluatedModelInterface",
    generator: "GeneratorInterface",
    oracle: "OracleInterface",
    config: PerturbationConfig,
    mask: "SparseMask | None" = None,
    progress: Callable[[PerturbationOutcome], None] | None = None,
):
    """Perturb every sample independently, in dataset order.

    Returns (outcomes, report) where the report aggregates SA/PA/VR/FMR over
    the run. Aggregation is order-independent (counts and means only).
    """
    from .metrics import compute_report  # local import avoids a cycle

    if len(dataset) == 0:
        raise ConfigurationError("empty dataset")
    outcomes = []
    for sample in dataset:
        outcome = perturb_sample(
            sample, model, generator, oracle, config, mask=mask
        )
        outcomes.append(outcome)
        if progress is not None:
            progress(outcome)
    report = compute_report(model, dataset, outcomes)
    return outcomes, report
