"""Two-timescale precoding for clustered massive MIMO networks.

The outer precoder of each cell is tracked on the Grassmann manifold from
slowly varying channel statistics; a small inner zero-forcing precoder
handles the fast fading inside the cell.
"""

from .config import SimConfig, load_config, parse_config
from .errors import ConfigError, DimensionError, SingularityError, TwoTierError, ValidationError
from .manifold import SubspacePoint, eigh_smallest, retract_qr, subspace_distance
from .sim import SimReport, run_simulation, sweep
from .tracker import TrackerState, compensation_step, init_state, oracle_outer_precoder, track_superframe

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "SimConfig",
    "SimReport",
    "SingularityError",
    "SubspacePoint",
    "TrackerState",
    "TwoTierError",
    "ValidationError",
    "compensation_step",
    "eigh_smallest",
    "init_state",
    "load_config",
    "oracle_outer_precoder",
    "parse_config",
    "retract_qr",
    "run_simulation",
    "subspace_distance",
    "sweep",
    "track_superframe",
]
