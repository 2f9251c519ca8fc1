from typing import Any, Optional


class WallrunError(Exception):
    """Base class for every error raised by wallrun."""


class ConfigError(WallrunError):
    """A run configuration could not be parsed or violates an invariant."""

    def __init__(self, message: str, line: Optional[int] = None, label: Optional[str] = None):
        self.line = line
        self.label = label
        where = label if label else (f'line {line}' if line else 'config')
        super().__init__(f'{where}: {message}')


class GridTooNarrow(WallrunError):
    """The grid cannot hold a kink with vacuum-flat ends."""


class IncompatibleVacua(WallrunError):
    """Two solitons do not share the vacuum between them."""


class CollisionSetupError(WallrunError, ValueError):
    """Initial data for a collision cannot be built as requested."""


class NumericalInstability(WallrunError):
    """Evolution or relaxation produced non-finite values or gained energy."""

    def __init__(self, message: str, last_good: Any = None):
        super().__init__(message)
        self.last_good = last_good


class RelaxationFailed(WallrunError):
    """A relaxation ran out of budget; the best profile found is attached."""

    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best


class SnapshotError(WallrunError):
    """Stored run output is missing or malformed."""
