"""Exception hierarchy shared across the package."""


class GreyBoxError(Exception):
    """Base class for all package errors."""


class CyclicGraph(GreyBoxError):
    pass


class BoundViolation(GreyBoxError):
    pass


class EmptyDomain(GreyBoxError):
    pass


class DomainViolation(GreyBoxError):
    pass


class OutputBoundViolation(GreyBoxError):
    pass


class DimensionMismatch(GreyBoxError):
    pass


class NumericalBreakdown(GreyBoxError):
    pass


class UnsupportedKernel(GreyBoxError):
    pass


class MissingGroundTruth(GreyBoxError):
    pass


class ConfigParse(GreyBoxError):
    """Raised for malformed experiment or problem configuration files."""

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
