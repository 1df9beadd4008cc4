"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """Invalid argument or inconsistent input data."""


class FormatError(ValidationError):
    """Malformed input file; message carries the file location."""

    def __init__(self, source: str, location: str, reason: str):
        self.source = source
        self.location = location
        self.reason = reason
        super().__init__(f"{source}: {location}: {reason}")
