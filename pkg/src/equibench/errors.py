"""Exception hierarchy shared across the pipeline.

Everything the CLI maps to exit code 1 derives from EquibenchError;
anything else escaping is a genuine bug.
"""


class EquibenchError(Exception):
    """Base class for expected pipeline failures."""


class ValidationError(EquibenchError, ValueError):
    """A panel, matrix, or config violates one of its invariants."""


class CsvFormatError(ValidationError):
    """A CSV cell could not be parsed; message names file, line, column."""


class ConfigurationError(EquibenchError, ValueError):
    """Caller supplied an unusable configuration (bad bounds, bad roster...)."""


class InsufficientHistoryError(EquibenchError):
    """Not enough trailing months to estimate the requested quantity."""


class TrainingDivergedError(EquibenchError):
    """Network training produced a non-finite loss."""

    def __init__(self, epoch: int, learning_rate: float):
        self.epoch = epoch
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite training loss at epoch {epoch} "
            f"(learning_rate={learning_rate:g}); lower the learning rate"
        )
