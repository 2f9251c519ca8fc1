from wallrun.runner.api import (
        RunConfig, HeatmapSpec, HeatmapQuantity, RelaxKind, Branch
)
from wallrun.runner.io import (
        read_config, write_config, apply_overrides,
        write_timeseries, read_timeseries, write_snapshot, read_snapshot,
        write_heatmap, write_outcome, read_outcome, read_trajectory
)
