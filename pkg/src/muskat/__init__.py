"""Pseudo-spectral solver for the Muskat interface problem on the torus.

Public entry points are re-exported here; see the submodules for the rest.
"""

from .besov import NormReport, besov_norm, partition_for, x1_kappa_norm
from .config import DEFAULT, SolverConfig
from .dn_solver import dn_apply, dn_remainder, solve_potential
from .errors import (
    ConfigError,
    DataTooLarge,
    FormMismatch,
    MuskatError,
    NoConvergence,
    SmallnessViolated,
)
from .evolution import march, solve_global_picard, stability_probe
from .oracle_fd import epsilon_scaling_probe, fd_dn
from .spectral_core import PhysicalParams, SpectralField, StripGrid, TorusGrid
from .two_phase import solve_f_minus, solve_two_phase_state, two_phase_rhs

__version__ = "0.1.0"

__all__ = [
    "DEFAULT", "ConfigError", "DataTooLarge", "FormMismatch", "MuskatError", "NoConvergence",
    "NormReport", "PhysicalParams", "SmallnessViolated", "SolverConfig", "SpectralField",
    "StripGrid", "TorusGrid", "besov_norm", "dn_apply", "dn_remainder", "epsilon_scaling_probe",
    "fd_dn", "march", "partition_for", "solve_f_minus", "solve_global_picard", "solve_potential",
    "solve_two_phase_state", "stability_probe", "two_phase_rhs", "x1_kappa_norm",
]
