"""Interface evolution: global Picard iteration on the mild form and an ETD2 marcher.

Both problems are written as ``d_t eta + kappa |D| eta = N(eta)`` with

* one phase: ``N = -kappa R^-(eta) eta``
* two phases: ``N = -kappa (R^+ + R^-) f^- / [rho] + kappa R^+ eta``

and the Duhamel integral is evaluated mode by mode with the same exponential
quadrature as the strip solver, at rate ``kappa |k|``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .besov import NormReport, besov_norm, partition_for, x1_kappa_norm
from .config import DEFAULT, SolverConfig
from .dn_solver import check_smallness, default_strip, remainder_batch
from .errors import DataTooLarge, NoConvergence, SmallnessViolated
from .spectral_core import PhysicalParams, SpectralField, StripGrid, exp_quadrature_weights, inverse
from .two_phase import two_phase_nonlinearity

log = logging.getLogger(__name__)

PROBLEMS = ("one_phase", "two_phase")


def _check_problem(problem: str):
    if problem not in PROBLEMS:
        raise ValueError(f"problem must be one of {PROBLEMS}, got {problem!r}")


def nonlinearity(strip: StripGrid, eta_hat: np.ndarray, params: PhysicalParams, problem: str,
                 config: SolverConfig = DEFAULT, cache: Optional[dict] = None) -> np.ndarray:
    """``N(eta_b)`` for a batch of surfaces ``(B, *shape)``.

    Raises :class:`SmallnessViolated` with ``index`` set to the first offending member.
    """
    _check_problem(problem)
    g = strip.torus
    eta_hat = np.array(eta_hat, dtype=complex)
    eta_hat[(slice(None),) + (0,) * g.d] = 0.0
    check_smallness(eta_hat, g, config.c_star)
    if problem == "one_phase":
        return -params.kappa * remainder_batch(strip, eta_hat, eta_hat, config, check=False,
                                               cache=cache, tag="eta")
    nonlin, _ = two_phase_nonlinearity(strip, eta_hat, params, config, check=False, cache=cache)
    return nonlin


def linear_flow(eta0: SpectralField, kappa: float, t: float) -> SpectralField:
    """``exp(-kappa t |D|) eta0`` (mean dropped)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return SpectralField(eta0.grid, eta0.coeffs * np.exp(-kappa * t * eta0.grid.kabs), True)


def _linear_path(eta0_hat: np.ndarray, kabs: np.ndarray, kappa: float, times: np.ndarray) -> np.ndarray:
    t = times.reshape((-1,) + (1,) * kabs.ndim)
    return eta0_hat[None] * np.exp(-kappa * t * kabs[None])


@dataclass
class SolutionPath:
    times: np.ndarray
    coeffs: np.ndarray  # (K + 1, *shape)
    grid: object
    params: PhysicalParams
    problem: str = "one_phase"
    iterations: int = 0
    contraction_ratio: float = 0.0
    differences: list = field(default_factory=list)
    converged: bool = True
    _report: Optional[NormReport] = field(default=None, repr=False)

    @property
    def etas(self) -> list:
        return [SpectralField(self.grid, c, True) for c in self.coeffs]

    @property
    def final(self) -> SpectralField:
        return SpectralField(self.grid, self.coeffs[-1], True)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def K(self) -> int:
        return len(self.times) - 1

    @property
    def report(self) -> NormReport:
        if self._report is None:
            self._report = NormReport.from_path(self.times, self.coeffs, partition_for(self.grid),
                                                self.params.kappa)
        return self._report

    def x1_kappa(self) -> float:
        return float(self.report.x1_kappa[-1])

    def with_coeffs(self, coeffs: np.ndarray, **changes) -> "SolutionPath":
        fields = dict(times=self.times, coeffs=coeffs, grid=self.grid, params=self.params,
                      problem=self.problem)
        fields.update(changes)
        return SolutionPath(**fields)


def uniform_times(T: float, K: int) -> np.ndarray:
    if not T > 0 or K < 1:
        raise ValueError("need T > 0 and K >= 1")
    return np.linspace(0.0, T, K + 1)


def duhamel_arrays(times: np.ndarray, eta0_hat: np.ndarray, nonlin: np.ndarray, kabs: np.ndarray,
                   kappa: float) -> np.ndarray:
    """``exp(-kappa t|D|) eta0 + int_0^t exp(-kappa (t - s)|D|) N(s) ds`` at every node."""
    out = _linear_path(eta0_hat, kabs, kappa, times)
    acc = np.zeros_like(eta0_hat)
    rate = kappa * kabs
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        wa, wb = exp_quadrature_weights(rate, h)
        acc = np.exp(-rate * h) * acc + wa * nonlin[k] + wb * nonlin[k + 1]
        out[k + 1] += acc
    return out


def duhamel_map(path: SolutionPath, eta0: SpectralField, problem: Optional[str] = None,
                config: SolverConfig = DEFAULT, strip: Optional[StripGrid] = None,
                nonlinear: bool = True, cache: Optional[dict] = None) -> SolutionPath:
    """Right side of the mild equation evaluated on ``path``.

    ``nonlinear=False`` drops the nonlinearity (pure linear flow).
    """
    problem = path.problem if problem is None else problem
    g = eta0.grid
    strip = default_strip(g, config) if strip is None else strip
    eta0_hat = np.array(eta0.coeffs)
    eta0_hat[(0,) * g.d] = 0.0
    if nonlinear:
        nonlin = nonlinearity(strip, path.coeffs, path.params, problem, config, cache)
    else:
        nonlin = np.zeros_like(path.coeffs)
    out = duhamel_arrays(path.times, eta0_hat, nonlin, g.kabs, path.params.kappa)
    return path.with_coeffs(out, problem=problem)


def _x1(times, coeffs, grid, kappa) -> float:
    return x1_kappa_norm(times, coeffs, partition_for(grid), kappa)


def solve_global_picard(eta0: SpectralField, T: float, K: Optional[int] = None,
                        tol: Optional[float] = None, max_iter: Optional[int] = None,
                        problem: str = "one_phase", params: Optional[PhysicalParams] = None,
                        config: SolverConfig = DEFAULT, strip: Optional[StripGrid] = None,
                        check_data: bool = True) -> SolutionPath:
    """Fixed point of the mild map on ``[0, T]`` by Picard iteration from the linear flow.

    Successive differences are measured in the discrete ``X^1_kappa`` norm;
    iteration stops once they fall below ``tol * ||eta0||_{B^1}``.
    """
    _check_problem(problem)
    params = PhysicalParams.one_phase() if params is None else params
    K = config.K if K is None else K
    tol = config.picard_tol if tol is None else tol
    max_iter = config.picard_max_iter if max_iter is None else max_iter
    g = eta0.grid
    strip = default_strip(g, config) if strip is None else strip
    P = partition_for(g)
    norm0 = besov_norm(eta0, 1.0, P)
    if check_data and norm0 > config.delta * (1.0 + 1e-12):
        raise DataTooLarge(f"||eta0||_B1 = {norm0:.4g} exceeds delta = {config.delta:g}",
                           value=norm0, threshold=config.delta, index=0)
    times = uniform_times(T, K)
    eta0_hat = np.array(eta0.coeffs)
    eta0_hat[(0,) * g.d] = 0.0
    path = SolutionPath(times, _linear_path(eta0_hat, g.kabs, params.kappa, times), g, params, problem)
    if norm0 == 0.0:
        return path
    diffs, ratio = [], 0.0
    floor = 1e3 * np.finfo(float).eps * norm0
    converged = False
    it = 0
    cache: dict = {}
    for it in range(1, max_iter + 1):
        new = duhamel_map(path, eta0, problem, config, strip, cache=cache)
        diff = _x1(times, new.coeffs - path.coeffs, g, params.kappa)
        if not math.isfinite(diff):
            raise NoConvergence("non-finite Picard iterate", diffs)
        if diffs and diffs[-1] > floor:
            ratio = max(ratio, diff / diffs[-1])
        diffs.append(diff)
        path = new
        if diff <= tol * norm0:
            converged = True
            break
    if not converged:
        if diffs[-1] > diffs[0]:
            raise NoConvergence(f"global Picard diverged (difference {diffs[-1]:.3g})", diffs)
        log.warning("global Picard stopped at max_iter=%d, difference %.3g", it, diffs[-1])
    log.info("global Picard: %d iterations, contraction ratio %.3g", it, ratio)
    path.iterations, path.contraction_ratio, path.differences, path.converged = it, ratio, diffs, converged
    return path


def accepted(path: SolutionPath, eta0: SpectralField, slack: float = 0.1) -> bool:
    """Converged, contracting by at least 1/2, and ``||eta||_X <= 2 (1 + slack) ||eta0||_B1``."""
    norm0 = besov_norm(eta0, 1.0, partition_for(eta0.grid))
    return bool(path.converged and path.contraction_ratio <= 0.5
                and path.x1_kappa() <= 2.0 * (1.0 + slack) * norm0 + 1e-300)


# -- time marching -----------------------------------------------------------


def step_march(eta_n: SpectralField, dt: float, problem: str = "one_phase",
               params: Optional[PhysicalParams] = None, config: SolverConfig = DEFAULT,
               strip: Optional[StripGrid] = None, nonlinear: bool = True) -> SpectralField:
    """One ETD2 step: exponential predictor, trapezoid-type exponential corrector."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    params = PhysicalParams.one_phase() if params is None else params
    g = eta_n.grid
    strip = default_strip(g, config) if strip is None else strip
    rate = params.kappa * g.kabs
    decay = np.exp(-rate * dt)
    wa, wb = exp_quadrature_weights(rate, dt)
    eta = np.array(eta_n.coeffs)[None]
    eta[(slice(None),) + (0,) * g.d] = 0.0
    if not nonlinear:
        return SpectralField(g, decay * eta[0], True)
    n0 = nonlinearity(strip, eta, params, problem, config)
    pred = decay * eta + (wa + wb) * n0
    n1 = nonlinearity(strip, pred, params, problem, config)
    return SpectralField(g, (decay * eta + wa * n0 + wb * n1)[0], True)


def march(eta0: SpectralField, T: float, steps: int, problem: str = "one_phase",
          params: Optional[PhysicalParams] = None, config: SolverConfig = DEFAULT,
          strip: Optional[StripGrid] = None, nonlinear: bool = True) -> SolutionPath:
    """Repeated :func:`step_march` on a uniform grid of ``steps`` steps."""
    params = PhysicalParams.one_phase() if params is None else params
    times = uniform_times(T, steps)
    strip = default_strip(eta0.grid, config) if strip is None else strip
    out = [eta0.without_mean()]
    for k in range(steps):
        try:
            out.append(step_march(out[-1], times[k + 1] - times[k], problem, params, config, strip, nonlinear))
        except SmallnessViolated as exc:
            exc.index = k
            raise
    return SolutionPath(times, np.stack([u.coeffs for u in out]), eta0.grid, params, problem)


# -- stability ----------------------------------------------------------------


@dataclass(frozen=True)
class StabilityResult:
    ratio: float
    identical: bool
    numerator: float
    denominator: float


def stability_probe(eta0_a: SpectralField, eta0_b: SpectralField, T: float, problem: str = "one_phase",
                    params: Optional[PhysicalParams] = None, K: Optional[int] = None,
                    config: SolverConfig = DEFAULT, tol: Optional[float] = None) -> StabilityResult:
    """``||eta_a - eta_b||_{X^1_kappa([0,T])} / ||eta0_a - eta0_b||_{B^1}``."""
    params = PhysicalParams.one_phase() if params is None else params
    P = partition_for(eta0_a.grid)
    denom = besov_norm(eta0_a - eta0_b, 1.0, P)
    if denom == 0.0:
        return StabilityResult(0.0, True, 0.0, 0.0)
    pa = solve_global_picard(eta0_a, T, K, tol, problem=problem, params=params, config=config)
    pb = solve_global_picard(eta0_b, T, K, tol, problem=problem, params=params, config=config)
    num = _x1(pa.times, pa.coeffs - pb.coeffs, eta0_a.grid, params.kappa)
    return StabilityResult(num / denom, False, num, denom)


def run_summary(path: SolutionPath, eta0: SpectralField, config: SolverConfig = DEFAULT) -> dict:
    return {
        "problem": path.problem,
        "N": path.grid.N,
        "K": path.K,
        "T": path.T,
        "kappa": path.params.kappa,
        "delta": config.delta,
        "iterations": path.iterations,
        "contraction_ratio": path.contraction_ratio,
        "x1_kappa_final": path.x1_kappa(),
        "accepted": accepted(path, eta0),
    }


def modal_decay_rates(path: SolutionPath, modes) -> dict:
    """Least-squares slope of ``-log |eta_k(t)|`` for each integer mode ``k`` (d = 1)."""
    out = {}
    for k in modes:
        amp = np.abs(path.coeffs[:, k])
        slope = np.polyfit(path.times, np.log(amp), 1)[0]
        out[k] = -float(slope)
    return out


def sup_physical(path: SolutionPath) -> np.ndarray:
    return np.abs(inverse(path.coeffs, path.grid.d)).reshape(len(path.times), -1).max(axis=1)
