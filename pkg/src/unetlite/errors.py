"""Exception hierarchy shared by all unetlite modules.

The CLI maps these onto stable exit codes: UsageError -> 1,
DataError and subclasses -> 2, ConfigError/ShapeError -> 3.
"""


class UnetliteError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(UnetliteError):
    """Caller invoked an operation with unusable arguments (empty batch set, iters=0, ...)."""


class ConfigError(UnetliteError):
    """A configuration object violates its invariants."""


class ShapeError(UnetliteError):
    """Tensor shapes or channel counts do not match the operation's contract."""


class NumericError(UnetliteError):
    """Numeric-domain violation (non-finite input, bad scale, ...)."""


class DataError(UnetliteError):
    """I/O-level problem: unreadable file, bad container, malformed image."""


class StoreFormatError(DataError):
    """Weight container is structurally invalid (bad magic, truncation, duplicates)."""


class BindingError(UnetliteError):
    """Weight store does not match the model (missing/extra/mis-shaped tensors)."""


class CalibrationError(UnetliteError):
    """Calibration statistics are missing or unusable for a quantization site."""


class IntegrityError(DataError):
    """Dataset or tile set is incomplete (orphan files, missing tiles)."""


class MetricError(UnetliteError):
    """A metric is undefined for the accumulated counts (empty denominator)."""


class InfeasibleError(UnetliteError):
    """A folding target cannot be met; carries the bottleneck layer name."""

    def __init__(self, message: str, bottleneck: str | None = None):
        super().__init__(message)
        self.bottleneck = bottleneck
