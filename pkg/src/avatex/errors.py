"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2,
MissingArtifactError -> 3, NumericError -> 4.
"""


class AvatexError(Exception):
    """Base class for package errors."""


class ConfigError(AvatexError):
    """Invalid configuration value, unknown key, or malformed config file."""


class MissingArtifactError(AvatexError):
    """A required file (checkpoint, dataset item, run output) is absent."""

    def __init__(self, path, detail: str = ""):
        self.path = str(path)
        msg = f"missing artifact: {self.path}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(AvatexError):
    """Non-finite values or numerically invalid state during computation."""


class CheckpointError(AvatexError):
    """Checkpoint is unreadable or its config fingerprint does not match."""


class PhaseError(AvatexError):
    """Failure inside a tagged pipeline phase; wraps the original error."""

    def __init__(self, phase: str, cause: BaseException):
        self.phase = phase
        self.cause = cause
        super().__init__(f"phase '{phase}' failed: {cause}")
