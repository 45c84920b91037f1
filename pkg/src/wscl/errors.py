"""Exception types shared across the package."""


class WsclError(Exception):
    """Base class for all library errors."""


class ShapeError(WsclError):
    """Operands have incompatible shapes or an operand has the wrong rank."""


class NumericError(WsclError):
    """A non-finite value reached a point where it must not propagate."""


class GradientError(WsclError):
    """Backward/optimizer contract violated (missing grad, non-scalar loss)."""


class DatasetFormatError(WsclError):
    """A dataset file failed to parse. `code` identifies the failure kind."""

    BAD_MAGIC = "bad_magic"
    TRUNCATED = "truncated"
    LABEL_RANGE = "label_range"

    def __init__(self, message: str, code: str):
        super().__init__(message)
        self.code = code


class ConfigError(WsclError):
    """Experiment configuration failed validation."""


class EngineError(WsclError):
    """Training-loop contract violated; message carries the task index."""
