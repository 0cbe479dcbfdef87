"""Simulation and damping-selection toolkit for a small wheeled vehicle
driving into a rectangular step obstacle."""

__version__ = "0.1.0"

from .contact import ContactParams, contact_force, impact_force, friction_coefficient
from .vehicle import (VehicleParams, VehicleState, Obstacle, ConfigurationError,
                      IntegrationError, initialize_equilibrium, integrate_step)
from .scenario import SimulationSettings, TrialResult, run_trial, detect_events, extract_metrics
from .campaign import (DoePlan, CampaignResult, TrialRecord, run_campaign, save_campaign,
                       load_campaign)
from .fitting import (SurfaceSpec, FittedSurface, fit_surface, fit_report, evaluate_surface,
                      DELTA_EC, PITCH_RATE, CDWO)

__all__ = [
    "__version__",
    "ContactParams", "contact_force", "impact_force", "friction_coefficient",
    "VehicleParams", "VehicleState", "Obstacle", "ConfigurationError", "IntegrationError",
    "initialize_equilibrium", "integrate_step",
    "SimulationSettings", "TrialResult", "run_trial", "detect_events", "extract_metrics",
    "DoePlan", "CampaignResult", "TrialRecord", "run_campaign", "save_campaign", "load_campaign",
    "SurfaceSpec", "FittedSurface", "fit_surface", "fit_report", "evaluate_surface",
    "DELTA_EC", "PITCH_RATE", "CDWO",
]
