"""Exception types raised across the lab."""


class LabError(Exception):
    """Base class for all lab errors."""


class NonFinite(LabError, ValueError):
    """An input or a computed result contains NaN or Inf."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DimensionMismatch(LabError, ValueError):
    pass


class DegreeTooLarge(LabError, ValueError):
    pass


class AllCoefficientsVanish(LabError, ValueError):
    pass


class AssumptionViolated(LabError):
    pass


class DegenerateGradient(LabError):
    pass


class InsufficientData(LabError):
    pass


class ParseError(LabError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class ValidationError(LabError):
    """Config validation failure; ``errors`` holds (field path, message) pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in self.errors))
