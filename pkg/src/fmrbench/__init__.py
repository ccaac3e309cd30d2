"""Dynamic robustness evaluation via oracle-constrained counterfactuals.

The package perturbs images along a generator's latent space to raise the
evaluated model's loss while a zero-shot oracle confirms the class is
preserved, then scores the model by how much accuracy survives (FMR).
Supporting pieces: sparse latent-dimension selection, pooled-estimator
verification, and a resumable evaluation harness with a CLI.
"""

from .errors import (
    AdapterError,
    ConfigurationError,
    ContractViolationError,
    InsufficientDataError,
    IntegrityError,
    SolverError,
    UndefinedMetricError,
)
from .estimators import (
    EstimatorSimConfig,
    EstimatorSimReport,
    GroundTruthDistribution,
    verify_proposition,
)
from .generators import (
    GeneratorInterface,
    LinearAutoencoderGenerator,
    SparseMask,
    apply_mask,
    fit_linear_autoencoder,
    masked_ascent_step,
)
from .metrics import (
    EvaluationReport,
    build_report,
    compute_report,
    fmr,
    fmr_raw,
    perturbed_accuracy,
    round2,
    standard_accuracy,
    validation_rate,
)
from .models import (
    ConvNetModel,
    EvaluatedModelInterface,
    MLPModel,
    fgsm_init,
    grayscale_wrap,
    load_model,
    save_model,
)
from .oracles import (
    PROMPT_TEMPLATE,
    Classification,
    LabelSet,
    OracleInterface,
    SurrogateOracle,
    build_prompts,
    top_class,
)
from .perturbation import (
    DIAGNOSTIC_ABORT,
    ORIGINAL_KEPT,
    PERTURBED,
    LabeledSample,
    Normalization,
    PerturbationConfig,
    PerturbationOutcome,
    TraceEntry,
    latent_ascent_step,
    latent_loss_and_gradient,
    perturb_dataset,
    perturb_sample,
)
from .sparse import (
    LatentClassificationDataset,
    SparseSelectionResult,
    collect_latents,
    fit_l1_logistic,
    load_selection,
    report_sparsity,
    save_selection,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "Classification",
    "ConfigurationError",
    "ContractViolationError",
    "ConvNetModel",
    "DIAGNOSTIC_ABORT",
    "EstimatorSimConfig",
    "EstimatorSimReport",
    "EvaluatedModelInterface",
    "EvaluationReport",
    "GeneratorInterface",
    "GroundTruthDistribution",
    "InsufficientDataError",
    "IntegrityError",
    "LabelSet",
    "LabeledSample",
    "LatentClassificationDataset",
    "LinearAutoencoderGenerator",
    "MLPModel",
    "Normalization",
    "ORIGINAL_KEPT",
    "OracleInterface",
    "PERTURBED",
    "PROMPT_TEMPLATE",
    "PerturbationConfig",
    "PerturbationOutcome",
    "SolverError",
    "SparseMask",
    "SparseSelectionResult",
    "SurrogateOracle",
    "TraceEntry",
    "UndefinedMetricError",
    "apply_mask",
    "build_prompts",
    "build_report",
    "collect_latents",
    "compute_report",
    "fgsm_init",
    "fit_l1_logistic",
    "fit_linear_autoencoder",
    "fmr",
    "fmr_raw",
    "grayscale_wrap",
    "latent_ascent_step",
    "latent_loss_and_gradient",
    "load_model",
    "load_selection",
    "masked_ascent_step",
    "perturb_dataset",
    "perturb_sample",
    "perturbed_accuracy",
    "report_sparsity",
    "round2",
    "save_model",
    "save_selection",
    "standard_accuracy",
    "top_class",
    "validation_rate",
    "verify_proposition",
]
