"""Deterministic vehicle-platoon simulator under delay-inducing DoS attacks.

Modules: ``topology`` (graphs and Laplacians), ``dynamics`` (closed loops and
the delayed RK4 integrator), ``attack`` (delay profiles), ``detection``
(twin-counter detector), ``resilience`` (re-election and dwell-time switching),
``stability`` (LMI certificate) and ``scenario`` (configs and the pipeline).
"""

from .errors import (
    AssumptionViolated, ConfigError, ContractViolation, DivergenceError, ElectionFailed,
    HistoryUnderrun, InvalidCertificate, InvalidInput, InvalidTopology, PlatoonError,
)
from .scenario import ScenarioConfig, ScenarioTrace, load_config, run

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolated", "ConfigError", "ContractViolation", "DivergenceError", "ElectionFailed",
    "HistoryUnderrun", "InvalidCertificate", "InvalidInput", "InvalidTopology", "PlatoonError",
    "ScenarioConfig", "ScenarioTrace", "load_config", "run",
]
