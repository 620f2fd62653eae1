from typing import Optional


class FourDError(Exception):
    """Base class for every error raised by the toolkit."""

    def __init__(self, detail: str = ""):
        super().__init__(detail)
        self.detail = detail


# Geometry
class NonPositiveDepth(FourDError):
    pass


class DegenerateGeometry(FourDError):
    pass


# Optimization
class MissingVariable(FourDError):
    pass


class SingularSystem(FourDError):
    pass


class GaugeFreedom(FourDError):
    pass


# Inertial / GPS
class EmptyWindow(FourDError):
    pass


class NonMonotoneTime(FourDError):
    pass


class TimestampOutsideBracket(FourDError):
    pass


# Data association / pipeline
class InsufficientCorrespondences(FourDError):
    pass


class InsufficientData(FourDError):
    pass


class InvalidParams(FourDError):
    pass


class NoGroundPlane(FourDError):
    pass


# IO
class ParseError(FourDError):
    def __init__(self, detail: str, line_number: Optional[int] = None):
        if line_number is not None:
            detail = f"line {line_number}: {detail}"
        super().__init__(detail)
        self.line_number = line_number


class DatasetError(FourDError):
    def __init__(self, detail: str, path: Optional[str] = None):
        if path is not None:
            detail = f"{path}: {detail}"
        super().__init__(detail)
        self.path = path
