"""Exception taxonomy shared across the toolkit.

Three error families map onto the CLI exit codes: configuration and
validation problems (exit 1), backend and transport failures (exit 2),
and data or schema violations in input files (exit 3).
"""


class PlatelineError(Exception):
    """Base class for every error the toolkit raises deliberately."""

    exit_code = 1


class ValidationError(PlatelineError):
    """Bad arguments, broken invariants, unusable configuration."""

    exit_code = 1


class ConfigError(ValidationError):
    """A run or tool configuration that cannot be executed as given."""


class TransportError(PlatelineError):
    """A backend or remote service could not be reached or misbehaved."""

    exit_code = 2


class BackendError(TransportError):
    """A pipeline backend failed in a way that aborts the run."""


class DataError(PlatelineError):
    """An input file whose content violates its declared schema."""

    exit_code = 3


class SchemaError(DataError):
    """A malformed line or field in a data file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateId(DataError):
    """The same image id appeared more than once in one input."""
