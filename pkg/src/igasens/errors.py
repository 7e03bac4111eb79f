"""Exception hierarchy shared by all modules."""


class IgaError(Exception):
    """Base class for all library errors."""


class DomainError(IgaError, ValueError):
    """An argument lies outside the admissible range."""


class ValidationError(IgaError, ValueError):
    """Inconsistent input data (counts, weights, knot layout)."""


class GeometryError(IgaError):
    """The geometry is unusable, e.g. the mapping is not valid."""


class GeometryParseError(GeometryError):
    """A geometry file could not be parsed.

    ``where`` names the offending JSON field (``patches[0].knots``) or the
    line/column for syntax errors.
    """

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class SingularityError(IgaError, ArithmeticError):
    """A matrix or scalar that must be inverted is singular."""


class DefinitenessError(IgaError):
    """A matrix that must be positive definite is not."""


class MultiplicityError(IgaError):
    """Derivatives were requested for a non-simple eigenvalue."""


class NumericalRankError(IgaError):
    """A bordered derivative system is numerically singular."""


class NoMatchError(IgaError):
    """Mode tracking found no candidate above the correlation threshold."""


class UnsupportedFeatureError(IgaError, NotImplementedError):
    """The requested combination of options is outside the supported scope."""
