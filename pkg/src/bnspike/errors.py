"""Shared exception types.

Every error raised by the library is a subclass of :class:`BnSpikeError`, so
callers (and the CLI) can distinguish library failures from programming bugs.
"""

from __future__ import annotations


class BnSpikeError(Exception):
    """Base class for all library errors."""


class DimensionError(BnSpikeError):
    """Vector or matrix dimensions do not match the dataset."""


class LabelError(BnSpikeError):
    """A label vector contains entries other than +1 and -1."""


class DegenerateStateError(BnSpikeError):
    """The Sigma-norm of w fell below the degeneracy threshold (1e-14)."""


class SingularSpectrumError(BnSpikeError):
    """Sigma restricted to span(X) has an eigenvalue at or below the clamp."""

    def __init__(self, eigenvalue: float, clamp: float) -> None:
        self.eigenvalue = eigenvalue
        self.clamp = clamp
        super().__init__(
            f"restricted second-moment eigenvalue {eigenvalue:.6e} is at or "
            f"below the clamp {clamp:.1e}; whitening refuses to regularize"
        )


class GenerationError(BnSpikeError):
    """A synthetic data generator failed to produce a valid instance."""


class BranchError(BnSpikeError):
    """A closed-form recurrence was invoked off its positive-alignment branch."""


class SeparabilityError(BnSpikeError):
    """The dataset is not linearly separable (dual objective diverged)."""


class ConvergenceError(BnSpikeError):
    """An iterative solver stopped above its required residual tolerance."""

    def __init__(self, message: str, residual: float) -> None:
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class SubspaceEmptyError(BnSpikeError):
    """The subspace a computation needs (e.g. span(X) without the reference
    direction) has dimension zero; the quantity is not applicable."""


class AssumptionViolationError(BnSpikeError):
    """Data violates a structural assumption (e.g. nondegenerate duals)."""


class PreconditionError(BnSpikeError):
    """An analysis was invoked outside its stated regime."""


class ConfigError(BnSpikeError):
    """A run configuration failed validation; message carries the field path."""


class TrajectoryError(BnSpikeError):
    """Trajectory-level failure; carries the iteration index when known."""

    def __init__(self, message: str, iteration: int | None = None) -> None:
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (at iteration {iteration})"
        super().__init__(message)


class PlotDataError(BnSpikeError):
    """A plot input file failed to parse; message carries the line number."""
