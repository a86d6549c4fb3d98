"""
Error types raised by the geometry engine and the scenario layer.

Geometry errors carry the offending sample point and residual when one is known
so that suites can turn them into failed check records.
"""

from typing import Optional, Sequence


class GeometryError(Exception):
    """Base class for failures of a geometric operation."""

    def __init__(self, message: str, point: Optional[Sequence[float]] = None,
                 residual: Optional[float] = None):
        self.point = None if point is None else tuple(float(v) for v in point)
        self.residual = residual
        details = []
        if self.point is not None:
            details.append(f"point={_format_point(self.point)}")
        if residual is not None:
            details.append(f"residual={residual:.3e}")
        super().__init__(message if not details else f"{message} ({', '.join(details)})")


def _format_point(point):
    return '(' + ', '.join(f"{v:.6g}" for v in point) + ')'


class OrderExhaustionError(GeometryError):
    """A field was asked for jets beyond the configured order."""


class SingularMetricError(GeometryError):
    """|det g| fell below the singular floor."""


class ValenceMismatchError(GeometryError):
    """Tensor valences or charts of the operands do not fit the operation."""


class DomainError(GeometryError):
    """A point lies outside a chart's guarded domain or a function's domain."""


class NonHermitianError(GeometryError):
    """F_A = g(A., .) has a symmetric part above tolerance."""


class NotHKTCompatibleError(GeometryError):
    """The three torsion expressions -d_A F_A disagree."""


class TypeConditionError(GeometryError):
    """Torsion has a (3,0)+(0,3) component with respect to some A."""


class NotSpecialHomothetyError(GeometryError):
    """A vector field failed the special homothety fit."""

    def __init__(self, message: str, equation: str = '', **kwargs):
        self.equation = equation
        super().__init__(message, **kwargs)


class PreconditionError(GeometryError):
    """An operation was called outside its stated preconditions."""


class DegenerateTransformError(GeometryError):
    """g_f is degenerate somewhere on the sampled region."""


class NotPotentialError(GeometryError):
    """The metrics recovered from F_I, F_J, F_K disagree."""


class NullVectorError(GeometryError):
    """X is null (g(X,X) too small) at a level-set point."""


class DimensionDefectError(GeometryError):
    """A rank check on a frame or distribution failed."""


class QuaternionicExtractionError(GeometryError):
    """A connection does not act on the quaternion basis by an sp(1) pattern."""


class DefinitenessError(GeometryError):
    """A metric that must be definite is not."""


class RoundTripError(GeometryError):
    """Quotient of the bundle structure does not reproduce the base data."""


class ScenarioError(Exception):
    """Base class for scenario file problems (usage errors)."""


class ScenarioSyntaxError(ScenarioError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class UnknownIdentifierError(ScenarioError):
    pass


class ArityError(ScenarioError):
    pass


class SuiteDependencyError(ScenarioError):
    pass
