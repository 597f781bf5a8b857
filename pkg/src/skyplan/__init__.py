"""Minimum-propulsion-power trajectory planning for cellular-connected
aerial vehicles under an intermittent SINR connectivity constraint."""

from .scenario import (GroundStation, Scenario, ScenarioError, ScaledScenario,
                       Timing, VehicleParams, default_scenarios, load_scenario,
                       nondimensionalize, save_scenario)
from .feasibility import (AssociationVector, FeasibilityCertificate,
                          FeasibilityResourceError, InitializationError,
                          circle_graph_check, grid_oracle_check,
                          initial_trajectory)
from .surrogate import (AssembledSubproblem, AssemblyError, Layout,
                        SubproblemOptions, TrajectoryIterate, assemble)
from .solver import (SmoothConvexProblem, SolverConfig, SolverResult,
                     derivative_check, solve)
from .sca import (InfeasibleScenarioError, ScaConfig, SolveReport,
                  SolverFailureError, SweepPoint, TrajectoryTrace,
                  gamma_sweep, round_and_validate, run)

__version__ = "0.1.0"

__all__ = [
    "AssembledSubproblem", "AssemblyError", "AssociationVector",
    "FeasibilityCertificate", "FeasibilityResourceError", "GroundStation",
    "InfeasibleScenarioError", "InitializationError", "Layout", "ScaConfig",
    "ScaledScenario", "Scenario", "ScenarioError", "SmoothConvexProblem",
    "SolveReport", "SolverConfig", "SolverFailureError", "SolverResult",
    "SubproblemOptions", "SweepPoint", "Timing", "TrajectoryIterate",
    "TrajectoryTrace", "VehicleParams", "assemble", "circle_graph_check",
    "default_scenarios", "derivative_check", "gamma_sweep",
    "grid_oracle_check", "initial_trajectory", "load_scenario",
    "nondimensionalize", "round_and_validate", "run", "save_scenario",
    "solve",
]
