"""Two-phase closure: the lower trace ``f^-`` as a fixed point, and the interface velocity.

Conventions: ``G^-(eta) = |D| + R^-(eta)`` and ``G^+(eta) = -|D| + R^+(eta)``,
so both remainders vanish at the flat interface.  The upper operator is
obtained by reflection, ``G^+(eta) g = -G^-(-eta) g``, hence
``R^+(eta) g = -R^-(-eta) g``.  Both remainders are produced by one batched
strip solve over the stacked surfaces ``[eta, -eta]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .besov import besov_norm, partition_for
from .config import DEFAULT, SolverConfig
from .dn_solver import check_smallness, default_strip, remainder_batch
from .errors import FormMismatch, NoConvergence
from .spectral_core import PhysicalParams, SpectralField, StripGrid, TorusGrid, inverse

log = logging.getLogger(__name__)


def _inv_abs(grid: TorusGrid) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(grid.kabs > 0, 1.0 / np.where(grid.kabs > 0, grid.kabs, 1.0), 0.0)


def _zero_mean(c: np.ndarray, d: int) -> np.ndarray:
    c = np.array(c, dtype=complex)
    c[(slice(None),) + (0,) * d] = 0.0
    return c


def remainders_pm(strip: StripGrid, eta_hat: np.ndarray, g_hat: np.ndarray,
                  config: SolverConfig = DEFAULT, cache: Optional[dict] = None, tag=None):
    """``(R^-(eta_b) g_b, R^+(eta_b) g_b)`` for a batch, from one stacked solve."""
    B = eta_hat.shape[0]
    rem = remainder_batch(strip, np.concatenate([eta_hat, -eta_hat]),
                          np.concatenate([g_hat, g_hat]), config, check=False, cache=cache, tag=tag)
    return rem[:B], -rem[B:]


@dataclass
class FMinusResult:
    f_hat: np.ndarray  # (B, *shape)
    iterations: int
    residuals: np.ndarray
    contraction_ratio: float
    r_minus_f: np.ndarray = field(repr=False, default=None)
    r_plus_f: np.ndarray = field(repr=False, default=None)
    r_plus_eta: np.ndarray = field(repr=False, default=None)


def f_minus_arrays(strip: StripGrid, eta_hat: np.ndarray, params: PhysicalParams,
                   config: SolverConfig = DEFAULT, check: bool = True,
                   cache: Optional[dict] = None) -> FMinusResult:
    """Picard iteration of ``g -> K(eta) g`` for every surface in the batch.

    ``cache`` carries warm starts for the strip solves between calls.
    """
    cache = {} if cache is None else cache
    g = strip.torus
    eta_hat = _zero_mean(eta_hat, g.d)
    if check:
        check_smallness(eta_hat, g, config.c_star)
    inv = _inv_abs(g)
    mp, mm, jump = params.mu_plus, params.mu_minus, params.jump
    total = mp + mm
    _, r_plus_eta = remainders_pm(strip, eta_hat, eta_hat, config, cache, "eta")
    g_plus_eta = -g.kabs * eta_hat + r_plus_eta
    forcing = -(jump * mm / total) * inv * g_plus_eta
    f = forcing
    scale = np.maximum(np.abs(inverse(forcing, g.d)).reshape(len(f), -1).max(axis=1),
                       np.finfo(float).tiny)
    residuals = []
    ratio = 0.0
    floor = 1e3 * np.finfo(float).eps
    r_minus = r_plus = None
    for it in range(1, config.f_minus_max_iter + 1):
        r_minus, r_plus = remainders_pm(strip, eta_hat, f, config, cache, "f")
        new = _zero_mean((mm * inv * r_plus - mp * inv * r_minus) / total + forcing, g.d)
        res = np.abs(inverse(new - f, g.d)).reshape(len(f), -1).max(axis=1) / scale
        if not np.all(np.isfinite(res)):
            raise NoConvergence("non-finite iterate in the f^- iteration", residuals)
        if residuals and residuals[-1].max() > floor:
            ratio = max(ratio, float(res.max() / residuals[-1].max()))
        residuals.append(res)
        f = new
        if res.max() <= config.f_minus_tol:
            break
    else:
        if residuals[-1].max() > residuals[0].max():
            raise NoConvergence(f"f^- iteration diverged (residual {residuals[-1].max():.3g})",
                                [r.max() for r in residuals])
        log.warning("f^- iteration stopped at max_iter with residual %.3g", residuals[-1].max())
    return FMinusResult(f, it, np.array(residuals), ratio, r_minus, r_plus, r_plus_eta)


def two_phase_nonlinearity(strip: StripGrid, eta_hat: np.ndarray, params: PhysicalParams,
                           config: SolverConfig = DEFAULT, check: bool = True,
                           return_direct: bool = False, cache: Optional[dict] = None):
    """``N(eta)`` with ``d_t eta + kappa |D| eta = N(eta)``, batched.

    ``N = -kappa (R^+ + R^-) f^- / [rho] + kappa R^+ eta``.  With
    ``return_direct`` the velocity ``-(1/mu^-) G^-(eta) f^-`` is returned as
    well, computed from fresh remainders at the converged ``f^-``.
    """
    g = strip.torus
    eta_hat = _zero_mean(eta_hat, g.d)
    cache = {} if cache is None else cache
    sol = f_minus_arrays(strip, eta_hat, params, config, check, cache)
    kappa, jump = params.kappa, params.jump
    r_minus, r_plus = remainders_pm(strip, eta_hat, sol.f_hat, config, cache, "f")
    nonlin = _zero_mean(-kappa * (r_plus + r_minus) / jump
                        + kappa * sol.r_plus_eta, g.d)
    if not return_direct:
        return nonlin, sol
    direct = _zero_mean(-(g.kabs * sol.f_hat + r_minus) / params.mu_minus, g.d)
    return nonlin, sol, direct


# -- single-field API ----------------------------------------------------------


@dataclass
class TwoPhaseState:
    eta: SpectralField
    f_minus: SpectralField
    f_plus: SpectralField
    params: PhysicalParams
    kappa_eff: float
    iterations: int = 0
    contraction_ratio: float = 0.0
    bound_ratio: float = 0.0  # ||f^-||_B0 / ([rho] || |D| eta ||_B0)

    def jump_defect(self) -> float:
        """``sup |f^+ - f^- + [rho] eta|``."""
        return (self.f_plus - self.f_minus + self.eta * self.params.jump).sup()


def _strip(eta: SpectralField, config: SolverConfig, strip: Optional[StripGrid]) -> StripGrid:
    return default_strip(eta.grid, config) if strip is None else strip


def _cfg(config: SolverConfig, tol, max_iter) -> SolverConfig:
    changes = {}
    if tol is not None:
        changes["f_minus_tol"] = tol
    if max_iter is not None:
        changes["f_minus_max_iter"] = max_iter
    return config.with_(**changes) if changes else config


def solve_two_phase_state(eta: SpectralField, params: PhysicalParams, tol: Optional[float] = None,
                          max_iter: Optional[int] = None, config: SolverConfig = DEFAULT,
                          strip: Optional[StripGrid] = None) -> TwoPhaseState:
    cfg = _cfg(config, tol, max_iter)
    strip = _strip(eta, cfg, strip)
    sol = f_minus_arrays(strip, np.asarray(eta.coeffs)[None], params, cfg)
    f_minus = SpectralField(eta.grid, sol.f_hat[0], True)
    P = partition_for(eta.grid)
    d_eta = SpectralField(eta.grid, eta.grid.kabs * eta.coeffs, True)
    denom = params.jump * besov_norm(d_eta, 0.0, P)
    bound = besov_norm(f_minus, 0.0, P) / denom if denom > 0 else 0.0
    log.info("f^- solved in %d iterations; ||f^-||_B0 / ([rho] |||D|eta||_B0) = %.3g", sol.iterations, bound)
    return TwoPhaseState(eta.without_mean(), f_minus, recover_f_plus(f_minus, eta, params), params,
                         params.kappa, sol.iterations, sol.contraction_ratio, bound)


def solve_f_minus(eta: SpectralField, params: PhysicalParams, tol: Optional[float] = None,
                  max_iter: Optional[int] = None, config: SolverConfig = DEFAULT,
                  strip: Optional[StripGrid] = None) -> SpectralField:
    """Lower trace ``f^-`` solving the flux-matching closure for ``eta``."""
    return solve_two_phase_state(eta, params, tol, max_iter, config, strip).f_minus


def recover_f_plus(f_minus: SpectralField, eta: SpectralField, params: PhysicalParams) -> SpectralField:
    """``f^+ = f^- - [rho] eta``."""
    return SpectralField(eta.grid, f_minus.coeffs - params.jump * eta.coeffs, True)


def flux_mismatch(state: TwoPhaseState, config: SolverConfig = DEFAULT,
                  strip: Optional[StripGrid] = None) -> float:
    """``sup |(1/mu^+) G^+ f^+ - (1/mu^-) G^- f^-|``."""
    from .dn_solver import dn_apply
    strip = _strip(state.eta, config, strip)
    upper = dn_apply(state.eta, state.f_plus, "plus", config, strip) / state.params.mu_plus
    lower = dn_apply(state.eta, state.f_minus, "minus", config, strip) / state.params.mu_minus
    return (upper - lower).sup()


def two_phase_rhs(eta: SpectralField, params: PhysicalParams, tol: Optional[float] = None,
                  config: SolverConfig = DEFAULT, strip: Optional[StripGrid] = None) -> SpectralField:
    """``d_t eta`` for the two-phase problem.

    Computed from the split form and from ``-(1/mu^-) G^-(eta) f^-``; the two
    must agree to ``10 * tol`` relative to the size of ``kappa |D| eta``.
    """
    cfg = _cfg(config, tol, None)
    strip = _strip(eta, cfg, strip)
    g = eta.grid
    eta_hat = _zero_mean(np.asarray(eta.coeffs)[None], g.d)
    nonlin, _, direct = two_phase_nonlinearity(strip, eta_hat, params, cfg, return_direct=True)
    split = nonlin - params.kappa * g.kabs * eta_hat
    scale = max(float(np.max(np.abs(inverse(params.kappa * g.kabs * eta_hat, g.d)))), np.finfo(float).tiny)
    gap = float(np.max(np.abs(inverse(split - direct, g.d)))) / scale
    if gap > 10.0 * cfg.f_minus_tol:
        raise FormMismatch(f"split and direct two-phase velocities differ by {gap:.3g} (relative)")
    return SpectralField(g, split[0], True)
