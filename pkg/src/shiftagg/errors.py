"""Exception taxonomy shared by all shiftagg modules.

Three branches, mirroring the CLI exit-code contract:

* :class:`ValidationError` (exit 2) -- malformed inputs, files, or configs.
* :class:`NumericalError` (exit 3)  -- a numerically well-posed request that
  could not be completed (singular systems, non-convergence).
* :class:`IoFailure` (exit 4)       -- the operating system refused an I/O
  operation.
"""


class ShiftAggError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ShiftAggError):
    """Invalid input data, file contents, or configuration."""


class NumericalError(ShiftAggError):
    """A numerical procedure failed (singularity, non-convergence)."""


class IoFailure(ShiftAggError):
    """An underlying I/O operation failed."""


# --- validation ----------------------------------------------------------


class MissingFile(ValidationError):
    """A required file is absent."""


class MalformedFile(ValidationError):
    """A file exists but its contents violate the documented format."""


class DimensionMismatch(ValidationError):
    """Array shapes are inconsistent with each other or with metadata."""


class NonFiniteValue(ValidationError):
    """A NaN or infinity appeared where finite values are required."""


class EmptyInput(ValidationError):
    """An operation received zero samples or zero feature columns."""


class ConfigInvalid(ValidationError):
    """A configuration value violates its documented constraints."""


class NegativeWeight(ValidationError):
    """A sample weight is negative where nonnegative weights are required."""


class AllZeroWeights(ValidationError):
    """A weight vector cannot be normalized because it sums to zero."""


class NonSymmetric(ValidationError):
    """A matrix that must be symmetric is not."""


class MissingOracleLabels(ValidationError):
    """Target-sample labels are required but absent from the bundle."""


class MissingPairing(ValidationError):
    """An explicit sample pairing is required but absent."""


class EmptyLayer(ValidationError):
    """An embedding layer contains no vectors."""


class NonPositiveConstant(ValidationError):
    """A Lipschitz constant must be strictly positive."""


# --- numerical -----------------------------------------------------------


class SingularSystem(NumericalError):
    """A linear system could not be factorized; the ridge grid is too small."""


class IllConditioned(NumericalError):
    """A solve was refused or failed its residual contract; supply a larger
    regularization value."""


class NonConvergence(NumericalError):
    """An iterative optimizer hit its iteration cap before reaching its
    gradient tolerance."""


class SingularFit(NumericalError):
    """A model fit failed even after regularizer escalation."""
