"""Covert data collection with a full-duplex UAV that jams ground wardens."""

from .scenario import Scenario, load_scenario, reference_scenario
from .shaf import build_initial_iterate, nearest_neighbour_tour, shaf_trajectory
from .psca import PenaltySchedule, psca_solve, verify_iterate

__all__ = [
    "Scenario",
    "load_scenario",
    "reference_scenario",
    "nearest_neighbour_tour",
    "shaf_trajectory",
    "build_initial_iterate",
    "PenaltySchedule",
    "psca_solve",
    "verify_iterate",
]
__version__ = "0.1.0"
