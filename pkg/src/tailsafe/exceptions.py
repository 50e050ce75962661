"""Exception hierarchy shared by every subpackage."""


class TailSafeError(Exception):
    """Base class for all library errors."""


class InputError(TailSafeError, ValueError):
    """Malformed or non-finite input."""


class RangeError(TailSafeError, ValueError):
    """Argument outside the domain covered by a grid or surface."""


class CalibrationError(TailSafeError):
    """Surface calibration failed; ``best`` carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NumericalError(TailSafeError):
    """A numerical routine produced an invalid intermediate (with location)."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class EstimationError(TailSafeError):
    """An estimator had no usable samples (e.g. an empty tail block)."""


class TrainingError(TailSafeError):
    """Non-finite loss or gradient during an update."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


class ConfigError(TailSafeError, ValueError):
    """Invalid run configuration; ``key_path`` names the offending key."""

    def __init__(self, message, key_path=""):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


class RecordRejected(TailSafeError):
    """A telemetry record failed its invariants and was not persisted."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class StorageError(TailSafeError):
    """Record store missing or unreadable."""
