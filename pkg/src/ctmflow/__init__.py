"""ctmflow: multi-commodity freeway traffic on the cell-transmission model.

Simulation of FIFO junction dynamics with per-commodity ramp-metering and
speed-limit controls, an exact convex (linear-program) relaxation of the
finite-horizon optimal control problem, control recovery that reproduces the
relaxed optimum in closed loop, and calibration of network parameters from
loop-detector style sensor data.
"""

from .network import (
    Cell,
    JunctionKind,
    NetworkGraph,
    RoutingEntry,
    RoutingSchedule,
    ValidationReport,
    adjacent_pairs,
    classify_junction,
    load_network_config,
    save_network_config,
    validate_routing,
)
from .diagrams import (
    AffinePiece,
    CarTruckSupplyParams,
    DemandFunction,
    FundamentalDiagram,
    SupplyFunction,
    car_truck_supply,
    linear_demand,
    max_stable_step,
)
from .scenario import (
    ControlSchedule,
    CostSpec,
    InflowProfile,
    PiecewisePoint,
    Scenario,
    load_scenario,
)
from .simulate import (
    SimulationResult,
    evaluate_cost,
    fifo_gamma,
    simulate,
    step,
    total_volume_series,
)
from .optimize import (
    RelaxationProblem,
    SolveResult,
    TightnessReport,
    aggregate_single_commodity,
    assemble_relaxation,
    check_feasible,
    recover_controls,
    solve_relaxation,
    verify_tightness,
)
from .lpformat import parse_lp_text, write_lp_text
from .calibrate import (
    CalibrationResult,
    RoadSpec,
    SensorTable,
    calibrate_network,
    estimate_routing,
    load_road_specs,
    load_sensor_csv,
    recommended_step_hours,
)
from .presets import (
    corridor_calibration,
    corridor_roads,
    corridor_scenario,
    two_branch_heuristic_control,
    two_branch_network,
    two_branch_scenario,
    write_corridor_roads_csv,
    write_corridor_sensor_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AffinePiece",
    "CalibrationResult",
    "CarTruckSupplyParams",
    "Cell",
    "ControlSchedule",
    "CostSpec",
    "DemandFunction",
    "FundamentalDiagram",
    "InflowProfile",
    "JunctionKind",
    "NetworkGraph",
    "PiecewisePoint",
    "RelaxationProblem",
    "RoadSpec",
    "RoutingEntry",
    "RoutingSchedule",
    "Scenario",
    "SensorTable",
    "SimulationResult",
    "SolveResult",
    "TightnessReport",
    "ValidationReport",
    "adjacent_pairs",
    "aggregate_single_commodity",
    "assemble_relaxation",
    "calibrate_network",
    "car_truck_supply",
    "check_feasible",
    "classify_junction",
    "corridor_calibration",
    "corridor_roads",
    "corridor_scenario",
    "estimate_routing",
    "evaluate_cost",
    "fifo_gamma",
    "linear_demand",
    "load_network_config",
    "load_road_specs",
    "load_scenario",
    "load_sensor_csv",
    "max_stable_step",
    "parse_lp_text",
    "recommended_step_hours",
    "recover_controls",
    "save_network_config",
    "simulate",
    "solve_relaxation",
    "step",
    "total_volume_series",
    "two_branch_heuristic_control",
    "two_branch_network",
    "two_branch_scenario",
    "validate_routing",
    "verify_tightness",
    "write_corridor_roads_csv",
    "write_corridor_sensor_csv",
    "write_lp_text",
]
