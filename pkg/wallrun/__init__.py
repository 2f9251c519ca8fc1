"""wallrun - domain walls of a two-field model on a 1+1D lattice"""

from wallrun.core import *
from wallrun.errors import (
        WallrunError, ConfigError, GridTooNarrow, IncompatibleVacua, CollisionSetupError,
        NumericalInstability, RelaxationFailed, SnapshotError
)
from wallrun.runner import *

__version__ = '0.1.1'
