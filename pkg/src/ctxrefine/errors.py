"""Exception types shared across the package.

Each family maps to a distinct CLI exit status (see ``cli.EXIT_CODES``).
"""


class InputError(ValueError):
    """Bad file, bad shape, unknown id or violated precondition."""


class NumericalDivergenceError(ArithmeticError):
    """The refinement objective became non-finite."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UnboundedObjectiveError(NumericalDivergenceError):
    """The aspect objective fell below the configured floor."""


class UndefinedMetricError(ValueError):
    """A metric has no meaningful value for the given input (e.g. one-class AUC)."""
