"""Exception hierarchy shared by all modules."""


class GCDError(Exception):
    """Base class for every error raised by this package."""


class InvalidSpecError(GCDError, ValueError):
    pass


class InvalidConfigError(GCDError, ValueError):
    pass


class InvalidInputError(GCDError, ValueError):
    pass


class InvalidCostError(GCDError, ValueError):
    pass


class GenerationError(GCDError, RuntimeError):
    pass


class EvaluationUnavailableError(GCDError, RuntimeError):
    """Raised when ground truth for unlabelled points is requested but absent."""


class FormatError(GCDError, ValueError):
    """Malformed feature or label file.

    ``offset`` is a byte offset for binary files and a 1-based line number
    for CSV files; ``kind`` is a short machine-readable tag.
    """

    def __init__(self, message, kind="format", offset=None):
        super().__init__(message)
        self.kind = kind
        self.offset = offset


class EmptySupervisionError(GCDError, ValueError):
    pass


class NumericalOverflowError(GCDError, FloatingPointError):
    pass


class TrainingDivergedError(GCDError, RuntimeError):
    pass
