"""Exception types shared across the package."""


class SimqError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(SimqError):
    """A file, record, or field does not conform to its declared format."""


class TrainingError(SimqError):
    """Model training cannot proceed or has diverged."""
