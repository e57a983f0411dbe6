"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class SimGuardError(Exception):
    exit_code = 1


class ConfigError(SimGuardError, ValueError):
    exit_code = 2


class DataError(SimGuardError, ValueError):
    exit_code = 3


class GraphFormatError(DataError):
    """Malformed input row; ``line`` is 1-based."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class GraphValidationError(DataError):
    pass


class TrainingDivergenceError(SimGuardError, RuntimeError):
    exit_code = 4

    def __init__(self, what, epoch, value=None):
        self.epoch = epoch
        msg = f"{what} diverged at epoch {epoch}"
        if value is not None:
            msg += f" (loss={value})"
        super().__init__(msg)


class InsufficientTriggersError(SimGuardError, RuntimeError):
    exit_code = 5


class StageError(SimGuardError, RuntimeError):
    """Wraps a failure with the pipeline stage it came from."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"[{stage}] {cause}")
