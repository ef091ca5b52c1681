"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid experiment setup (bad sizes, empty cities, K > N, ...)."""


class UsageError(ValueError):
    """Caller broke an operation contract (dimension mismatch, bad index)."""


class ParseError(ValueError):
    """Malformed input file; carries the 1-based offending line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
