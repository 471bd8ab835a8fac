"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A supplied parameter violates a documented precondition."""


class InvalidScheduleError(ValueError):
    """An impact schedule places overlapping pulses on one channel."""


class NumericalDivergenceError(RuntimeError):
    """An estimator produced a non-finite intermediate quantity.

    ``step`` names the recursion stage that failed.
    """

    def __init__(self, step: str, detail: str = ""):
        self.step = step
        msg = f"non-finite quantity at step '{step}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EndOfDataError(RuntimeError):
    """A smoothing window extends past the end of the measurement record."""


class ArrayDivergenceError(RuntimeError):
    """Every candidate in a filter array is scored infinite."""


class ConfigError(ValueError):
    """A run configuration is malformed; ``path`` names the offending key."""

    def __init__(self, path: str, detail: str):
        self.path = path
        super().__init__(f"{path}: {detail}")
