"""Exception hierarchy shared by every module.

The CLI maps ``ConfigError`` to exit code 2 and every other ``MetaIoTError``
to exit code 3.
"""


class MetaIoTError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(MetaIoTError, ValueError):
    """Invalid or inconsistent configuration."""


class DomainError(MetaIoTError, ValueError):
    """An argument lies outside the domain of a physical formula."""


class RangeError(DomainError):
    """A condition value lies outside the configured range of a material."""


class SingularityError(DomainError):
    """The reflection coefficient is undefined (Z = -Z0)."""


class ExtrapolationError(DomainError):
    """A correction table was queried outside its sampled hull."""


class GeometryError(DomainError):
    """The sensor array is larger than the antenna footprint."""


class TrainingError(MetaIoTError, RuntimeError):
    """Training diverged to a non-finite loss."""


class StageError(MetaIoTError, RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
