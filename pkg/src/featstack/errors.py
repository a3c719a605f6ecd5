"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes or lengths do not agree."""


class InvalidInputError(ValueError):
    """An argument is outside the domain an operation accepts."""


class NotPositiveDefiniteError(ValueError):
    """A matrix expected to be symmetric positive definite is not."""


class FoldError(ValueError):
    """Invalid fold configuration for cross-validation."""


class LearnerError(RuntimeError):
    """A base learner failed while building the out-of-fold matrix."""

    def __init__(self, message, fold=None, learner=None):
        super().__init__(message)
        self.fold = fold
        self.learner = learner


class DataError(ValueError):
    """A data file could not be ingested.

    ``row`` is 1-based over data rows (the header is row 0); ``column`` is the
    header name of the offending cell.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingTargetError(DataError):
    pass


class EmptyFileError(DataError):
    pass


class ConfigError(ValueError):
    """Experiment configuration is invalid."""


class ModelFormatError(ValueError):
    """A persisted model file is corrupt or incomplete."""


class UnsupportedVersionError(ModelFormatError):
    def __init__(self, found, expected):
        super().__init__(
            f"unsupported model format version {found!r}; this build reads version {expected!r}"
        )
        self.found = found
        self.expected = expected


class StageError(RuntimeError):
    """An experiment stage failed; ``stage`` names the step."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
