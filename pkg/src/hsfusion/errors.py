"""Exception hierarchy shared by the library and the CLI."""


class FusionError(Exception):
    """Base class for every error raised by :mod:`hsfusion`."""


class ShapeError(FusionError, ValueError):
    """Array or cube dimensions are inconsistent."""


class DegenerateInputError(FusionError, ValueError):
    """Input carries no usable information (e.g. zero variance)."""


class ConfigError(FusionError, ValueError):
    """One or more configuration fields are invalid.

    All offending fields are collected in :attr:`problems` so they can be
    reported together.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericalError(FusionError, ArithmeticError):
    """A solver produced non-finite values.

    Carries the iteration index and the name of the offending block.
    """

    def __init__(self, message, iteration=None, block=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.block = block
        self.trace = list(trace or [])
