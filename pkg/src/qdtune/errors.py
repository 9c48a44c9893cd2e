"""Exception types shared across the package."""


class QdtuneError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(QdtuneError):
    """A parameter, config file, or argument combination is invalid."""


class DomainError(QdtuneError):
    """A voltage or window lies outside the device domain."""


class ShapeError(QdtuneError):
    """An array has the wrong shape or an axis is too short."""


class ScanFormatError(QdtuneError):
    """A scan, model, or dataset file is malformed.

    The message names the offending field where possible.
    """


class ScanVersionError(ScanFormatError):
    """A file declares a schema version this build does not read."""


class UnsupportedResolutionError(QdtuneError):
    """A window was requested at a resolution the source cannot provide."""


class TrainingDivergedError(QdtuneError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at training step {step}")
