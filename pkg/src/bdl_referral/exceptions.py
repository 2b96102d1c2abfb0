"""Exception types raised across the package."""

from sklearn.exceptions import NotFittedError


class ShapeError(ValueError):
    """Array dimensions do not agree with the network or each other."""


class EmptyBatchError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, index, value):
        self.index = int(index)
        self.value = value
        super().__init__(f"non-finite gradient {value!r} at flat parameter index {self.index}")


class TrainingError(ValueError):
    """Training cannot start, e.g. only one class is present."""


class UndefinedAUCError(ValueError):
    """ROC/AUC requested for a label vector containing a single class."""


class StratificationError(ValueError):
    pass


class CSVParseError(ValueError):
    def __init__(self, message, row=None, line=None):
        self.row = row
        self.line = line
        where = f"row {row} (line {line}): " if row is not None else ""
        super().__init__(where + message)


class NormalizationStateError(NotFittedError):
    pass


class CheckpointError(ValueError):
    """A checkpoint file could not be parsed into a model."""


class IncompatibleCheckpointError(CheckpointError):
    pass
