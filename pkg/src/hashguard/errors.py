"""Exception hierarchy; the CLI maps these to distinct exit codes."""


class HashGuardError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(HashGuardError):
    """Caller violated an operation's precondition (exit code 2)."""


class ConfigError(HashGuardError):
    """A configuration is inconsistent or unsatisfiable (exit code 3)."""


class TrainingDiverged(HashGuardError):
    """Training loss became NaN or infinite (exit code 4)."""


class CalibrationMismatch(HashGuardError):
    """Detector state does not match the model it is applied to (exit code 4)."""
