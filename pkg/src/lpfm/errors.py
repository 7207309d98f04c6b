"""Exception hierarchy shared across the package."""


class LpfmError(Exception):
    pass


class NumericInputError(LpfmError, ValueError):
    pass


class ConvergenceError(LpfmError, RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class ConfigurationError(LpfmError, ValueError):
    pass


class DataError(LpfmError, ValueError):
    pass


class FormatError(LpfmError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class TrainingError(LpfmError, RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class TapeError(LpfmError, RuntimeError):
    pass


class NumericWarning(UserWarning):
    pass
