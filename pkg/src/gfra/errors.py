"""Exception types shared across the package."""


class GfraError(Exception):
    """Base class for all package errors."""


class DomainError(GfraError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractViolation(GfraError, ValueError):
    """Inputs violate a documented precondition (shapes, ordering, ranges)."""


class ConfigError(GfraError, ValueError):
    """A configuration document failed validation."""


class SizeLimitError(GfraError, RuntimeError):
    """A requested computation exceeds the configured memory guard."""


class NumericalGuardError(GfraError, RuntimeError):
    """A runtime numerical guard tripped (non-positive precision, failed
    factorization after jitter retries, degenerate pilot)."""

    def __init__(self, message, iteration=None, step=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration}, step {step})"
        super().__init__(message)
        self.iteration = iteration
        self.step = step
