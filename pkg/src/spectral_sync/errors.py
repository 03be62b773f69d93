"""Exception types raised across the package."""


class SpectralSyncError(Exception):
    """Base class for all package errors."""


class ValidationError(SpectralSyncError, ValueError):
    pass


class NoCommonNodes(SpectralSyncError):
    pass


class ParseError(SpectralSyncError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyGraph(SpectralSyncError):
    pass


class DegenerateSpectrum(SpectralSyncError):
    pass


class SingularElimination(SpectralSyncError):
    pass


class TooLarge(SpectralSyncError):
    pass


class ConvergenceFailure(SpectralSyncError):
    pass


class DimensionMismatch(SpectralSyncError, ValueError):
    pass


class IndexOutOfRange(SpectralSyncError, IndexError):
    pass


class NonpositiveLambdaMax(SpectralSyncError, ValueError):
    pass


class NoOverlap(SpectralSyncError):
    pass


class MissingAuxiliary(SpectralSyncError):
    pass


class Disconnected(SpectralSyncError):
    pass


class NumericalFailure(SpectralSyncError):
    pass


class InvalidSpec(SpectralSyncError, ValueError):
    pass
