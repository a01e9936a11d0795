"""Exception hierarchy shared by all hetmed modules.

Two broad families matter to callers: ``ValidationError`` for bad inputs or
configuration (CLI exit code 2) and ``NumericalError`` for estimation
failures on valid inputs (CLI exit code 3).
"""


class HetmedError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HetmedError):
    """Invalid input data or configuration."""


class NumericalError(HetmedError):
    """Numerical failure during estimation on otherwise valid input."""


class MissingColumn(ValidationError):
    """A required column is absent from the input table."""


class NonBinaryTreatment(ValidationError):
    """Treatment column does not take exactly two distinct levels."""


class NonFiniteValue(ValidationError):
    """A NaN/inf/unparseable cell was found; message names column and row."""


class ArmEmpty(ValidationError):
    """One treatment arm has no (or too few) units."""


class LengthMismatch(ValidationError):
    """Vector arguments have incompatible lengths."""


class DimensionMismatch(ValidationError):
    """Matrix/vector arguments have incompatible shapes."""


class InvalidDimension(ValidationError):
    """A size parameter is out of its admissible range."""


class InvalidLambda(ValidationError):
    """Negative regularization strength."""


class InvalidConfig(ValidationError):
    """A configuration object violates its invariants."""


class GroupEmpty(ValidationError):
    """A subgroup comparison has fewer than two members on one side."""


class SingularDesign(NumericalError):
    """Design matrix numerically singular (condition threshold exceeded)."""


class Underdetermined(NumericalError):
    """Fewer observations than coefficients where a unique fit is required."""


class MaxIterations(NumericalError):
    """Iterative solver exhausted its iteration budget."""


class SplitDegenerate(NumericalError):
    """A random half-split left one treatment arm empty after retries."""
