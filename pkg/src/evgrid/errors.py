"""Exception hierarchy shared by every evgrid module."""


class EvgridError(Exception):
    """Base class for all evgrid failures."""


class DomainError(EvgridError, ValueError):
    """An input violates the documented domain of an operation."""


class ConvergenceError(EvgridError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    Attributes
    ----------
    best : object
        Best iterate found (assignment, schedule, power-flow solution, ...).
    residual : float
        Residual of ``best`` in the units of the failing solver.
    context : dict
        Extra tags, e.g. the slot index of a failing power-flow solve.
    """

    def __init__(self, message, best=None, residual=float("nan"), **context):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.context = context


class ConfigError(EvgridError, ValueError):
    """Invalid or unparsable run configuration."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
