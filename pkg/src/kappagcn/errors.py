"""Exception hierarchy shared by every module of the package."""


class KappaGCNError(Exception):
    """Base class for all package errors."""


class DomainError(KappaGCNError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class AntipodalError(DomainError):
    """The kappa-addition denominator vanishes (kappa > 0, x = y / (kappa |y|^2))."""


class DegenerateMidpointError(KappaGCNError, ValueError):
    """The gyromidpoint normaliser sum_j a_j (lambda_j - 1) is (numerically) zero."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ZeroWeightError(DegenerateMidpointError):
    """Weights sum to zero for a Euclidean (kappa = 0) weighted mean."""


class ShapeError(KappaGCNError, ValueError):
    """Operands have non-conforming shapes."""


class NotScalarError(KappaGCNError, ValueError):
    """backward() was called on a non-scalar node."""


class InsufficientGraphError(KappaGCNError, ValueError):
    """The graph is too small to draw a single curvature sample."""


class ParseError(KappaGCNError, ValueError):
    """A data file could not be parsed. ``lineno`` is 1-based."""

    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno


class InfeasibleSplitError(KappaGCNError, ValueError):
    """Requested split sizes cannot be met by the labelled nodes."""


class ConfigError(KappaGCNError, ValueError):
    """An experiment or CLI configuration is invalid."""


class EndpointIndexError(KappaGCNError, IndexError):
    """An edge endpoint lies outside ``[0, n)``. ``lineno`` is 1-based."""

    def __init__(self, message, path=None, lineno=None):
        where = f"{path}:{lineno}: " if path is not None else ""
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno
