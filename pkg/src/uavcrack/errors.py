"""Exception hierarchy shared by every stage of the inspection pipeline."""


class InspectionError(Exception):
    """Base class for all errors raised by uavcrack."""


class InvalidParameter(InspectionError, ValueError):
    pass


class InvalidChannelCount(InspectionError, ValueError):
    pass


class DimensionMismatch(InspectionError, ValueError):
    pass


class ParseError(InspectionError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingOrigin(InspectionError):
    pass


class DegenerateGeometry(InspectionError):
    pass


class TooFewPoints(InspectionError):
    pass


class OutOfBounds(InspectionError):
    pass


class InvalidMove(InspectionError, ValueError):
    pass


class InvalidEndpoint(InspectionError):
    pass


class Unreachable(InspectionError):
    pass


class ImageTooSmall(InspectionError):
    pass


class TooFewMatches(InspectionError):
    pass


class StitchGraphDisconnected(InspectionError):
    def __init__(self, components: list[list[int]]):
        self.components = components
        super().__init__(f"match graph has {len(components)} components: {components}")


class PeaksNotFound(InspectionError):
    def __init__(self, found: int):
        self.found = found
        super().__init__(f"expected 3 dominant histogram peaks, found {found}")


class IoError(InspectionError, OSError):
    pass


class ConfigError(InspectionError):
    pass


class StageError(InspectionError):
    """Wraps a failure inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
