"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions disagree with the declared architecture or batch."""


class NumericalError(ArithmeticError):
    """A computation produced or received a NaN/Inf value."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class CsvFormatError(ValueError):
    """A dataset file is truncated or contains a malformed row."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LabelRangeError(CsvFormatError):
    """A label read from a file lies outside [0, n_classes)."""
