"""Shared exception types."""


class RandlabError(Exception):
    """Base class for all library errors."""


class DimensionError(RandlabError, ValueError):
    """Tensor shapes do not compose for the requested operation."""


class DomainError(RandlabError, ValueError):
    """Operand outside the mathematical domain of an operation."""


class ConfigError(RandlabError, ValueError):
    """Invalid model/run configuration.

    ``field`` carries a dotted path into the offending config entry when known.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class TapeError(RandlabError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar loss, double backward, ...)."""


class IdxFormatError(RandlabError, ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


class TrainingDiverged(RandlabError, RuntimeError):
    """Non-finite loss or gradient encountered during training."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        self.epoch = epoch
        self.step = step
        super().__init__(message)
