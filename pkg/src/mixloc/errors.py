"""Exception types raised across the package."""


class MixlocError(Exception):
    """Base class for all package errors."""


class AngleNearPi(MixlocError):
    """Rotation angle too close to pi for a unique logarithm."""


class CovarianceNotPSD(MixlocError):
    """Covariance could not be factorized even after jitter."""


class TagAtAnchor(MixlocError):
    """Tag position coincides with an anchor; TDOA gradient undefined."""


class TooFewSamples(MixlocError):
    pass


class MissingTheta(MixlocError):
    """A TDOA measurement references a pair with no noise model."""


class SolverDiverged(MixlocError):
    pass


class SingularInformation(MixlocError):
    """Information matrix could not be factorized (under-constrained graph)."""


class ConfigInvalid(MixlocError):
    pass


class LengthMismatch(MixlocError):
    pass


class ParseError(MixlocError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SchemaVersionMismatch(ParseError):
    pass
