class RpsError(Exception):
    """Base class for library errors."""


class ZeroEigenvalue(RpsError):
    pass


class GridTooCoarse(RpsError):
    pass


class DimensionMismatch(RpsError):
    pass


class NegativeTime(RpsError):
    pass


class NonFiniteDrift(RpsError):
    pass


class GridMisaligned(RpsError):
    pass


class OutOfExtent(RpsError):
    pass


class WrongTimeSign(RpsError):
    pass


class WindowExceedsExtent(OutOfExtent):
    pass


class DivergentSeries(RpsError):
    pass


class SingularSystem(RpsError):
    def __init__(self, msg, cond=None):
        super().__init__(msg)
        self.cond = cond


class NoConvergence(RpsError):
    """Raised only on request; carries the partial result."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class ParseError(RpsError):
    def __init__(self, msg, line=None, column=None):
        loc = "" if line is None else f" (line {line}, column {column})"
        super().__init__(msg + loc)
        self.line = line
        self.column = column


class ValidationError(RpsError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))
