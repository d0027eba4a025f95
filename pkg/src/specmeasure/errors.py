"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can report
``error[<code>]`` and exit with status 2.
"""

from __future__ import annotations


class SpecmeasureError(Exception):
    """Base class for all validation and numeric failures."""

    code = "error"


class ConfigurationError(SpecmeasureError):
    code = "configuration"


class H1Violation(SpecmeasureError):
    """Domain is not a valid bounded open set."""

    code = "H1"


class H2Violation(SpecmeasureError):
    """Kernel fails nonnegativity or the near-diagonal lower bound."""

    code = "H2"


class H3Violation(SpecmeasureError):
    """Coefficient field is not finite and bounded on the closed domain."""

    code = "H3"


class SingularNodeError(SpecmeasureError):
    """A grid node touches the coefficient's argmax set."""

    code = "singular-node"


class IterationLimitError(SpecmeasureError):
    """Power iteration hit max_iter before reaching the residual tolerance."""

    code = "iteration-limit"

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class InconsistencyError(SpecmeasureError):
    """Computed quantities contradict a structural bound."""

    code = "inconsistency"


class ClassificationUnstableError(SpecmeasureError):
    """Regime classification disagrees between consecutive grid levels."""

    code = "classification-unstable"


class NearSingularSystemError(SpecmeasureError):
    """Fredholm system is too close to singular to solve reliably."""

    code = "near-singular-system"


class PositivityViolationError(SpecmeasureError):
    code = "positivity-violation"


class UnsupportedMeasureError(SpecmeasureError):
    code = "unsupported-measure"


class NormalizationError(SpecmeasureError):
    code = "normalization"


class InvalidEigenpairError(SpecmeasureError):
    code = "invalid-eigenpair"
