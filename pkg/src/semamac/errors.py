"""Error classes shared across the package, grouped by exit-code class."""


class SemamacError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SemamacError):
    """An experiment configuration violates an invariant."""


class ContractError(SemamacError):
    """An operation was called with arguments outside its contract."""


class UnsupportedConfigurationError(SemamacError):
    """The requested computation is valid but not supported by this routine."""


class ResourceBudgetError(SemamacError):
    """A search exceeds its enumeration budget.

    Carries an optional suggestion (e.g. a coarser grid step) when one exists.
    """

    def __init__(self, message, suggestion=None):
        super().__init__(message)
        self.suggestion = suggestion


class TrainingDivergedError(SemamacError):
    """Training produced a non-finite loss; carries the offending batch seed."""

    def __init__(self, message, batch_seed=None, slot=None):
        super().__init__(message)
        self.batch_seed = batch_seed
        self.slot = slot
