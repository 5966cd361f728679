"""Exception types raised across the package."""


class SpilloverError(Exception):
    """Base class for every error raised by this package."""


class UnbalancedPanel(SpilloverError):
    pass


class InvalidTreatment(SpilloverError):
    pass


class DuplicateRow(SpilloverError):
    pass


class InvalidHistory(SpilloverError, ValueError):
    pass


class EmptyCircle(SpilloverError):
    """No unit has a neighbour inside the requested distance bin."""


class SeparationError(SpilloverError):
    """Logistic likelihood has no finite maximiser; refit with ``ridge > 0``."""


class DegenerateResponse(SpilloverError):
    pass


class NoSupport(SpilloverError):
    """An arm of the contrast has no (weighted) units."""

    def __init__(self, message, arm=None):
        super().__init__(message)
        self.arm = arm


class RankDeficient(SpilloverError):
    pass


class Mismatch(SpilloverError):
    pass


class ConfigError(SpilloverError, ValueError):
    """Invalid run configuration; ``field`` carries the dotted path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message
