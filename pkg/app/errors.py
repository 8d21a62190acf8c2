"""Exception hierarchy for the pricing laboratory."""
from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the laboratory."""


class ModelValidationError(LabError, ValueError):
    """A model file, measure, utility or claim failed validation."""


class SpaceMismatch(ModelValidationError):
    """Two objects live on different outcome sets."""


class InvalidMeasure(ModelValidationError):
    """Weights are negative or do not sum to one."""


class UtilityValidationError(ModelValidationError):
    """Utility parameters outside the supported family or failing the Inada check."""


class EquivalenceViolation(LabError, ValueError):
    """A measure that must be equivalent has a zero atom."""


class DegenerateConditioning(LabError, ValueError):
    """Conditioning on a node with zero probability mass."""


class InvalidNumeraire(LabError, ValueError):
    """The requested numeraire asset is unknown or not strictly positive."""


class DomainError(LabError, ValueError):
    """Argument outside the domain of a utility or conjugate."""


class LawMismatch(LabError, ValueError):
    """A law is not equivalent to the law of the random element it refers to."""


class NoArbitrageViolation(LabError):
    """The martingale polytope has no strictly positive point."""


class SolverFailure(LabError, RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message: str, residual: Optional[float] = None, iterations: Optional[int] = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CompletenessRequired(LabError):
    """The operation is only defined for complete models."""


class MartingalePropertyViolation(LabError):
    """The pricing density fails the node-level martingale certificate."""


class InconclusiveBasis(LabError):
    """Sampled pricing measures cannot separate claims; the subspace is an over-estimate."""

    def __init__(self, message: str, subspace=None):
        super().__init__(message)
        self.subspace = subspace


class WitnessUnavailable(LabError):
    """No non-invariance witness exists (the model is complete)."""
