"""EV commuting congestion game coupled with smart charging and AC power flow.

Modules
-------
traffic      Wardrop equilibrium of the EV/GV path-choice game, charging needs
grid         MV grid model, admittance matrix, Newton-Raphson power flow
scheduling   local, global and grid-aware charging schedules
experiments  toll sweep, method benchmark, T = 3 illustration
config, cli  YAML run configuration and the ``evgrid`` command
"""

from .errors import ConfigError, ConvergenceError, DomainError, EvgridError
from .grid import (BusSpec, GridModel, LineSpec, PowerFlowSolution, SlotWeights, TransformerSpec,
                   build_paper_grid, grid_cost, head_apparent_power, solve_power_flow)
from .kernels import BACKEND
from .scheduling import (METHODS, LoadSchedule, schedule_global, schedule_grid_aware,
                         schedule_local, waterfill)
from .traffic import (ChargingNeeds, EquilibriumResult, FlowAssignment, PathSpec, TransportScenario,
                      VehicleClassSpec, bpr_travel_time, charging_needs, driving_cost, reference_scenario,
                      solve_wardrop)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "METHODS", "BusSpec", "ChargingNeeds", "ConfigError", "ConvergenceError",
    "DomainError", "EquilibriumResult", "EvgridError", "FlowAssignment", "GridModel", "LineSpec",
    "LoadSchedule", "PathSpec", "PowerFlowSolution", "SlotWeights", "TransformerSpec",
    "TransportScenario", "VehicleClassSpec", "bpr_travel_time", "build_paper_grid",
    "charging_needs", "driving_cost", "grid_cost", "head_apparent_power", "reference_scenario",
    "schedule_global", "schedule_grid_aware", "schedule_local", "solve_power_flow",
    "solve_wardrop", "waterfill",
]
