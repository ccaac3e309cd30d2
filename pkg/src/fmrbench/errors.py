"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigurationError -> 2,
AdapterError -> 3, IntegrityError -> 4. Everything else is a plain failure.
"""


class ContractViolationError(ValueError):
    """An operation was called with arguments that violate its contract."""


class ConfigurationError(Exception):
    """Run configuration is invalid or references missing inputs."""


class InsufficientDataError(ConfigurationError):
    """Not enough data to perform the requested computation."""


class AdapterError(Exception):
    """A model, generator, or oracle adapter failed or is unavailable."""


class IntegrityError(Exception):
    """Persisted artifacts are inconsistent with their manifest or config."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. FMR with SA = 0)."""


class SolverError(RuntimeError):
    """The optimization diverged or failed to make progress."""
