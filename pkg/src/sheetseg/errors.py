"""Exception types shared across the package."""


class SheetsegError(Exception):
    """Base class for all package errors."""


class FormatError(SheetsegError):
    """File content is not a supported volume format."""


class ConfigurationError(SheetsegError):
    """Invalid configuration or split request."""


class PreprocessingError(SheetsegError):
    """Preprocessing produced an unusable intermediate (e.g. empty brain mask)."""


class ContractError(SheetsegError):
    """An operation was called with inputs violating its contract."""


class MetricError(SheetsegError):
    """A metric is undefined for the given inputs (e.g. HD95 with an empty mask)."""
