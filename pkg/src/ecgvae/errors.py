"""Exception types shared across the pipeline.

The CLI maps each family onto an exit code: usage problems exit 2,
data/format problems exit 3, numeric failures exit 4.
"""


class EcgVaeError(Exception):
    """Base class for all package errors."""


class ParameterError(EcgVaeError, ValueError):
    """An argument lies outside its valid domain.

    ``field`` names the offending parameter.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DataError(EcgVaeError):
    """Input data cannot be used (too few patients, single class, ...)."""


class RecordRejected(DataError):
    """A record did not survive preprocessing."""

    def __init__(self, reason: str, patient_id: str | None = None):
        super().__init__(reason)
        self.reason = reason
        self.patient_id = patient_id


class FormatError(DataError):
    """A file on disk does not match the expected layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ArchitectureMismatch(FormatError):
    """A checkpoint's architecture differs from the one requested."""

    def __init__(self, fields: list[str]):
        super().__init__("architecture mismatch in fields: " + ", ".join(fields))
        self.fields = fields


class NumericError(EcgVaeError, ArithmeticError):
    """A loss or gradient became non-finite.

    ``term`` names the loss component that failed.
    """

    def __init__(self, term: str, message: str = "non-finite value"):
        super().__init__(f"{term}: {message}")
        self.term = term
