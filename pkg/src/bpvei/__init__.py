"""Branching processes in varying environment with generation-dependent immigration.

Exact generating-function computations, moment recursions, extinction and
criticality analysis, a truncated-pmf oracle, reproducible Monte Carlo, and
gamma-limit verification.
"""

from .environment import BpveiModel, build_model, law_at, preset_model, preset_names
from .laws import LawSpec, ParamSchedule, ValidationError, instantiate

__version__ = "0.1.0"

__all__ = [
    "BpveiModel",
    "build_model",
    "law_at",
    "preset_model",
    "preset_names",
    "LawSpec",
    "ParamSchedule",
    "ValidationError",
    "instantiate",
    "__version__",
]
