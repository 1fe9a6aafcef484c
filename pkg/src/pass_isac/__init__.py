"""CRB-minimising beamforming and antenna placement for pinching-antenna ISAC."""
from .config import SystemConfig, db_to_linear, dbm_to_watt, watt_to_dbm
from .errors import (DegenerateBeam, DegenerateGeometry, EmptyFeasibleInterval, Infeasible,
                     InfeasibleLayout, NoFeasibleIterate, PassIsacError, SingularFim,
                     SolverFailure, SurrogateInfeasible)
from .geometry import (ChannelSet, PassLayout, Scenario, effective_channels, sinr,
                       uniform_layout)
from .fim import FimCrb, fim_crb
from .sdr import BeamformingSolution, optimize_beamforming
from .pinching import PlacementGrid, penalty_loop
from .ao import SolveReport, solve

__version__ = "0.1.0"

__all__ = [
    "SystemConfig", "db_to_linear", "dbm_to_watt", "watt_to_dbm",
    "PassIsacError", "InfeasibleLayout", "DegenerateGeometry", "SingularFim", "Infeasible",
    "SolverFailure", "DegenerateBeam", "SurrogateInfeasible", "EmptyFeasibleInterval",
    "NoFeasibleIterate",
    "PassLayout", "Scenario", "ChannelSet", "uniform_layout", "effective_channels", "sinr",
    "FimCrb", "fim_crb", "BeamformingSolution", "optimize_beamforming",
    "PlacementGrid", "penalty_loop", "SolveReport", "solve", "__version__",
]
