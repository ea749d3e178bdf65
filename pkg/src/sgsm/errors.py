"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class SGSMError(Exception):
    exit_code = 1


class ConfigError(SGSMError, ValueError):
    exit_code = 2


class DataError(SGSMError, ValueError):
    exit_code = 3


class TrainingDivergence(SGSMError, RuntimeError):
    exit_code = 4


class StageError(SGSMError):
    """Wraps a failure inside one pipeline stage, keeping the original exit code."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
