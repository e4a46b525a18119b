"""Exception types shared across the package."""


class MslcError(Exception):
    """Base class for all package errors."""


class DimensionError(MslcError):
    """Operand shapes do not conform; the message names the operand."""


class ContractViolation(MslcError):
    """An input breaks a documented precondition (e.g. a target row is not
    a probability distribution)."""


class ConfigError(MslcError):
    """A configuration value is out of range or inconsistent."""


class SchemaError(MslcError):
    """A CSV file does not match the declared schema."""


class CsvParseError(MslcError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class TrainingDiverged(MslcError):
    """A non-finite value appeared during training; carries the step index
    and, when available, the offending batch indices."""

    def __init__(self, message: str, step_index: int | None = None, batch_indices=None):
        super().__init__(message)
        self.step_index = step_index
        self.batch_indices = batch_indices
