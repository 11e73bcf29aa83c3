"""Tolerances and thresholds shared by the solvers.

The smallness constants are configuration values, not derived quantities:
the analysis guarantees they exist but never fixes them numerically.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class SolverConfig:
    # Dirichlet-Neumann fixed point
    dn_tol: float = 1e-12
    dn_max_iter: int = 60
    c_star: float = 0.1  # bound on || |D| eta ||_{B^0_{inf,1}}
    denominator_guard: float = 0.4  # min of 1 + |D|H tolerated inside Q_a
    M: int = 65
    grading: float = 4.0
    z_richardson: bool = True  # combine strips of M and 2M - 1 nodes
    # two-phase closure
    f_minus_tol: float = 1e-12
    f_minus_max_iter: int = 60
    # global Picard on the mild formulation
    picard_tol: float = 1e-10
    picard_max_iter: int = 60
    delta: float = 0.05  # bound on ||eta_0||_{B^1_{inf,1}}
    K: int = 64
    # measured-constant ceilings
    c_stab: float = 10.0

    def __post_init__(self):
        for name in ("dn_tol", "f_minus_tol", "picard_tol", "c_star", "delta", "denominator_guard", "c_stab"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.c_star < 1:
            raise ValueError("c_star must be < 1")
        if self.M < 4 or self.K < 1:
            raise ValueError("need M >= 4 and K >= 1")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT = SolverConfig()
