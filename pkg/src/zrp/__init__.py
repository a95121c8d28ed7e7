"""Simulation and numerical verification for the symmetric zero-range process."""
from .rates import RateFunction, builtin_rate, e1_rate, linear_rate, queue_rate, validate_assumptions
from .thermo import ThermoTable

__all__ = [
    "RateFunction", "ThermoTable", "builtin_rate", "e1_rate", "linear_rate",
    "queue_rate", "validate_assumptions",
]
__version__ = "0.1.0"
