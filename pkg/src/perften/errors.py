"""Exception hierarchy shared by all perften modules."""


class PerftenError(Exception):
    """Base class for every error raised by perften."""


class DimensionError(PerftenError, ValueError):
    pass


class EmptySelectionError(PerftenError, ValueError):
    pass


class EmptyDataError(PerftenError, ValueError):
    pass


class DataError(PerftenError, ValueError):
    pass


class DomainError(PerftenError, ValueError):
    pass


class SchemaError(PerftenError, ValueError):
    pass


class ParseError(PerftenError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class InfeasiblePlanError(PerftenError, ValueError):
    pass


class UnknownLabelError(PerftenError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DuplicateEntryError(PerftenError, ValueError):
    pass


class InfeasibleFitError(PerftenError, RuntimeError):
    """A model cannot be trained on the given data (e.g. a tensor slice has no observations)."""
