"""Exception hierarchy. Each error carries the CLI exit code it maps to."""


class WavblurError(Exception):
    exit_code = 1


class IoError(WavblurError, OSError):
    exit_code = 3


class FormatError(WavblurError, ValueError):
    exit_code = 4


class ChecksumError(FormatError):
    pass


class ParseError(FormatError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column or 1}: {message}"
        super().__init__(message)


class DimensionError(WavblurError, ValueError):
    exit_code = 5


class LevelError(DimensionError):
    pass


class ShapeError(DimensionError):
    pass


class GeometryError(DimensionError):
    pass


class MetaMismatch(DimensionError):
    pass


class DomainError(DimensionError):
    pass


class DegenerateError(DimensionError):
    pass


class SubbandIndexError(WavblurError, IndexError):
    exit_code = 5


class InfeasibleWarning(RuntimeWarning):
    """The fidelity ball looks unreachable: the residual stalled above its radius."""
