"""Exception hierarchy shared by all punit modules."""


class PunitError(Exception):
    """Base class for every error raised by punit."""

    exit_code = 3


class ValidationError(PunitError, ValueError):
    """Invalid user input, parameters or documents."""

    exit_code = 2


class SizeError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class DomainError(ValidationError):
    """A parameter lies outside the parametric domain [0, 1]."""


class ConfigError(ValidationError):
    pass


class FormatError(PunitError, ValueError):
    """Malformed or truncated binary/text artifact."""

    exit_code = 4


class InfeasibleError(PunitError):
    """The input cannot support the requested computation (e.g. too few solid voxels)."""


class DataError(PunitError):
    pass


class UnderdeterminedError(PunitError):
    """A basis function has no data point in its support."""

    def __init__(self, index, message=None):
        self.index = tuple(int(i) for i in index)
        super().__init__(message or f"basis {self.index} has no data point in its support")


class SolverError(PunitError):
    """A linear solve diverged or did not reach its tolerance."""
