"""Exception hierarchy shared by every module of the package."""


class AutoclipError(Exception):
    """Base class for all errors raised by :mod:`autoclip`."""


class NormalizationError(AutoclipError, ValueError):
    """A vector could not be scaled to unit length (zero or non-finite)."""


class ShapeError(AutoclipError, ValueError):
    pass


class ConfigError(AutoclipError, ValueError):
    pass


class ScoreError(AutoclipError, ValueError):
    pass


class FormatError(AutoclipError, ValueError):
    """Malformed tensor file. ``offset`` is the byte position of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(AutoclipError, ValueError):
    pass


class IoError(AutoclipError, OSError):
    pass


class SampleError(AutoclipError, ValueError):
    """Wraps a failure while processing one sample of a batch."""

    def __init__(self, sample_index, cause):
        super().__init__(f"sample {sample_index}: {cause}")
        self.sample_index = sample_index
        self.cause = cause
