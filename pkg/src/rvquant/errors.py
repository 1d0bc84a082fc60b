"""Exception hierarchy shared by all rvquant modules."""


class RVQuantError(Exception):
    """Base class for every error raised by this package."""


class DataError(RVQuantError, ValueError):
    """Input data violates a documented precondition."""


class InsufficientData(DataError):
    pass


class InvalidPrice(DataError):
    pass


class GapError(DataError):
    pass


class NonPositiveValue(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyResiduals(DataError):
    pass


class InsufficientAnchors(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class MissingData(DataError):
    pass


class DuplicateDate(DataError):
    pass


class DimError(DataError):
    pass


class AlignError(DataError):
    pass


class IncompleteCurve(DataError):
    pass


class InvalidLevel(DataError):
    pass


class InvalidInterval(DataError):
    pass


class NoOOBData(DataError):
    pass


class DegenerateSeries(DataError):
    """Loss differential has zero variance; the two forecasts are indistinguishable."""


class ConfigError(RVQuantError, ValueError):
    pass


class NumericalError(RVQuantError, ArithmeticError):
    """A solver failed to produce an answer."""


class NonConvergent(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class SolverError(NumericalError):
    pass
