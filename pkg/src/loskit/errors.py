"""Exception types shared across the toolkit."""


class LosKitError(Exception):
    """Base class for all toolkit errors."""


class MalformedCode(LosKitError):
    """ICD-9 text does not parse: bad characters, wrong root length, or an extension longer than two digits."""


class NonPositiveStay(LosKitError):
    """Discharge date is on or before the admission date."""


class SourceUnreadable(LosKitError):
    """Record source cannot be opened or its header does not match the required columns."""


class RejectedRowsError(LosKitError):
    """Strict-mode load aborted because at least one row was rejected."""

    def __init__(self, message: str, rejections=()):
        super().__init__(message)
        self.rejections = list(rejections)


class ConfigInvalid(LosKitError):
    """A configuration value violates its declared constraints."""


class FormatError(LosKitError):
    """A code table row is malformed; carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DimensionMismatch(LosKitError):
    """An embedding row does not have the declared number of components."""


class EmptyDataset(LosKitError):
    """Operation requires at least one record."""


class LengthMismatch(LosKitError):
    """Paired sequences have different lengths."""


class EmptyInput(LosKitError):
    """Operation requires non-empty input."""


class TooFewGroups(LosKitError):
    """At least two groups are required."""


class EmptyGroup(LosKitError):
    """Every group must contain at least one value."""


class DomainError(LosKitError):
    """Argument outside the mathematical domain of the function."""


class RankDeficientDesign(LosKitError):
    """Design matrix does not have full column rank."""


class UnknownMethod(LosKitError):
    """Requested encoding method is not one of the supported choices."""


class SchemaMismatch(LosKitError):
    """Input columns do not match the schema the model was trained on."""


class EmptyRole(LosKitError):
    """A split scenario assigned zero records to one of its roles."""
