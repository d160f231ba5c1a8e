"""Exception types raised across pvkit."""


class PvkitError(Exception):
    """Base class for all pvkit errors."""


class EmptyInput(PvkitError, ValueError):
    pass


class DisjointnessViolation(PvkitError, ValueError):
    """Drugs of interest overlap the reference drug set."""


class NoMatchingRows(PvkitError, ValueError):
    pass


class DegenerateTable(PvkitError, ValueError):
    """The table has no mass (grand total of zero)."""


class DegenerateMarginals(PvkitError, ValueError):
    """A row marginal is zero or covers the whole table."""


class ImpossibleBaseline(PvkitError, ValueError):
    """A cell has positive count but zero expected count."""


class FitFailure(PvkitError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GridFailure(PvkitError, ValueError):
    pass


class AicFailure(PvkitError, RuntimeError):
    pass


class MalformedInput(PvkitError, ValueError):
    """An input file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
