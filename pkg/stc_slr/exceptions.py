"""
Exceptions raised by the stc_slr package.
"""


class StcException(Exception):
    """
    Base class for all errors raised by stc_slr.
    """

    def __init__(self, message: str):
        """
        Initializes the exception with the given message.
        """
        super().__init__(message)


class ShapeMismatchError(StcException, ValueError):
    """
    Raised when operand shapes are incompatible. Carries the offending dims.
    """

    def __init__(self, message: str, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        dims = ", ".join(str(s) for s in self.shapes)
        super().__init__(f"{message} (shapes: {dims})" if dims else message)


class NonFiniteError(StcException, ValueError):
    """
    Raised when a tensor would hold NaN or Inf values.
    """


class GradientError(StcException, RuntimeError):
    """
    Raised on invalid backward roots or parameters missing a gradient.
    """


class CheckpointFormatError(StcException, ValueError):
    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path} @ byte {offset}: {message}")


class PoseFormatError(StcException, ValueError):
    """
    Raised when a pose sequence violates the 49-joint layout or holds non-finite values.
    """


class DatasetFormatError(StcException, ValueError):
    def __init__(self, path, message: str, offset: int = None):
        self.path = str(path)
        self.offset = offset
        location = f"{self.path} @ byte {offset}" if offset is not None else self.path
        super().__init__(f"{location}: {message}")


class AugmentConfigError(StcException, ValueError):
    pass


class BankError(StcException, ValueError):
    """
    Raised on memory bank misuse: oversize batches, non-unit vectors, broken lockstep.
    """


class EmptyBankError(BankError):
    pass


class ConfigError(StcException, ValueError):
    pass


class TrainingDivergedError(StcException, RuntimeError):
    """
    Raised when the pre-training objective turns non-finite.
    """

    def __init__(self, step: int, components: dict, reason: str = "non-finite loss"):
        self.step = step
        self.components = dict(components)
        parts = ", ".join(f"{k}={v}" for k, v in self.components.items())
        super().__init__(f"Training halted at step {step}: {reason}. Components: {parts or 'none'}")


class ScoreFileMismatchError(StcException, ValueError):
    def __init__(self, message: str, divergent_ids=()):
        self.divergent_ids = sorted(divergent_ids)
        suffix = f" Divergent ids: {', '.join(self.divergent_ids)}" if self.divergent_ids else ""
        super().__init__(message + suffix)
