"""Exception hierarchy shared across the package.

Every refusal carries a human-readable ``condition`` label naming the
hypothesis that failed, so front ends can cite it verbatim.
"""


class ChaingradError(Exception):
    """Base class for all package errors."""

    condition = None


class DimensionMismatch(ChaingradError, ValueError):
    """Operands live on different (or non-conformable) state spaces."""


class ModelError(ChaingradError, ValueError):
    """A model object violates one of its structural requirements."""


class ContractionError(ChaingradError, RuntimeError):
    """A required operator-contraction check came back inconclusive.

    Carries the weighted norms of the powers that were tried so the caller
    can see how far from contraction the kernel is.
    """

    def __init__(self, message, norms=None, condition=None):
        super().__init__(message)
        self.norms = list(norms) if norms is not None else []
        self.condition = condition


class NumericalError(ChaingradError, RuntimeError):
    """A linear solve or downstream computation failed numerically."""


class TruncationError(ChaingradError, RuntimeError):
    """A simulated path hit the hard step cap before its stopping rule.

    ``partial`` holds whatever prefix of the path was generated.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SchemaError(ChaingradError, ValueError):
    """An experiment configuration failed schema validation."""
