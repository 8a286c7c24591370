"""Few-boson binding thresholds in a finite square well and adiabatic culling rates."""

from .model import (ConfigError, ConvergenceError, CullingError, InteractionSpec,
                    ScheduleSpec, WellSpec, g_from_scattering)

__all__ = [
    "ConfigError", "ConvergenceError", "CullingError", "InteractionSpec",
    "ScheduleSpec", "WellSpec", "g_from_scattering",
]

__version__ = "0.1.0"
