"""Energy-efficient fixed-wing UAV communication trajectories."""

from uavee.scenario import (
    AircraftParams,
    DesignMetrics,
    DiscreteTrajectory,
    LinkParams,
    ScenarioError,
    SolverSettings,
    TrajectoryConstraints,
    load_scenario,
    metrics,
)

__all__ = [
    "AircraftParams",
    "DesignMetrics",
    "DiscreteTrajectory",
    "LinkParams",
    "ScenarioError",
    "SolverSettings",
    "TrajectoryConstraints",
    "load_scenario",
    "metrics",
]

__version__ = "0.1.0"
