"""Planar UAV/target engagement with ZEM-surface sliding-mode guidance."""

from .control import AtsmcParams, Controller, Mode
from .dynamics import EngagementState, VehicleCoeffs
from .sim import (ScenarioConfig, Trace, monte_carlo, run_engagement, simulate)

__version__ = "0.1.0"

__all__ = [
    "AtsmcParams", "Controller", "EngagementState", "Mode", "ScenarioConfig", "Trace",
    "VehicleCoeffs", "monte_carlo", "run_engagement", "simulate", "__version__",
]
