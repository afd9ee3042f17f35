"""Exception hierarchy shared by the kernels, the evaluation layer, the solver and the CLI.

Entry scripts map `UsageError` (and argument parsing errors) to exit code 1 and every
`NumericalFailure` to exit code 2.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from src.quadrature import OracleResult


class BemError(Exception):
    """Base class of every error raised by this package."""


class UsageError(BemError, ValueError):
    pass


############# Geometry ##############
class GeometryError(BemError, ValueError):
    pass


class NotRightAngled(GeometryError):
    pass


class DegenerateTriangle(GeometryError):
    pass


class NotOrthogonalSides(GeometryError):
    pass


############# Numerics ##############
class NumericalFailure(BemError, ArithmeticError):
    pass


class EvaluationFailure(NumericalFailure):
    """An exact kernel produced a value that must not be trusted.

    `code` names the failure class (see `src.kernels.FailureCode`), `indices` lists the flat
    indices of the offending entries of a batched evaluation and `diagnostics` optionally
    carries the `KernelTerms` of the evaluation.
    """

    def __init__(
        self,
        message: str,
        code: Any = None,
        indices: list[int] | None = None,
        diagnostics: Any = None,
    ):
        super().__init__(message)
        self.code = code
        self.indices = indices or []
        self.diagnostics = diagnostics


class LogDomainFailure(EvaluationFailure):
    """An edge logarithm received a nonpositive argument (point on an edge or corner)."""


class NodeCollision(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    def __init__(self, message: str, result: "OracleResult | None" = None):
        super().__init__(message)
        self.result = result


class UnresolvableEvaluation(NumericalFailure):
    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


class SingularMatrix(NumericalFailure):
    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


class InsufficientSamples(NumericalFailure):
    pass


class OutOfBand(NumericalFailure):
    """A study result misses the band it is checked against."""

    def __init__(self, message: str, failures: list[str] | None = None):
        super().__init__(message)
        self.failures = failures or []
