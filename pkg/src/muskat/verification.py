"""The acceptance suite: one deterministic check per criterion.

Each check returns a :class:`CheckResult` whose ``measured`` and
``thresholds`` dicts are JSON-ready.  Wall-clock times are kept apart from
the results so that reports are byte-identical across runs.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .besov import besov_norm, partition_for
from .config import DEFAULT, SolverConfig
from .dn_solver import dn_apply, dn_remainder, solve_potential
from .evolution import modal_decay_rates, solve_global_picard
from .oracle_fd import epsilon_scaling_probe, fd_dn, loglog_fit
from .spectral_core import (
    PhysicalParams,
    SpectralField,
    TorusGrid,
    abs_derivative,
    random_trig_polynomial,
    resample,
)
from .two_phase import solve_f_minus, two_phase_rhs

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    id: int
    name: str
    passed: bool
    measured: dict
    thresholds: dict
    seconds: float = field(default=0.0, compare=False)

    def as_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": bool(self.passed),
                "measured": _jsonable(self.measured), "thresholds": _jsonable(self.thresholds)}

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        bits = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items() if not isinstance(v, (list, dict)))
        return f"[{tag}] {self.id:>2} {self.name}: {bits}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- helpers -----------------------------------------------------------------


def scaled_random(grid: TorusGrid, rng: np.random.Generator, target: float, norm: str = "B1",
                  n_modes: int = 6, k_max: int = 4) -> SpectralField:
    """Random trig polynomial (at most 8 active modes) scaled to a target norm.

    ``norm`` is ``"B1"`` for ``||u||_{B^1}`` or ``"DB0"`` for ``|| |D| u ||_{B^0}``.
    """
    u = random_trig_polynomial(grid, rng, min(n_modes, 8), k_max)
    P = partition_for(grid)
    if norm == "B1":
        size = besov_norm(u, 1.0, P)
    elif norm == "DB0":
        size = besov_norm(abs_derivative(u), 0.0, P)
    else:
        raise ValueError(norm)
    return u * (target / size)


def _b(u: SpectralField, s: float) -> float:
    return besov_norm(u, s, partition_for(u.grid))


# -- criteria ----------------------------------------------------------------


def check_partition(seed: int, config: SolverConfig) -> CheckResult:
    from .besov import make_partition, phi

    worst_sum = worst_sq_lo = 0.0
    sq_min, sq_max = math.inf, -math.inf
    support_bad = 0
    max_active = 0
    for grid in [TorusGrid(n) for n in (8, 16, 32, 64, 128, 256, 512)] + [TorusGrid(64, d=2)]:
        P = make_partition(grid)
        w = P.phi_weights
        nz = grid.kabs > 0
        s = w.sum(axis=0)[nz]
        sq = (w**2).sum(axis=0)[nz]
        worst_sum = max(worst_sum, float(np.max(np.abs(s - 1.0))))
        sq_min, sq_max = min(sq_min, float(sq.min())), max(sq_max, float(sq.max()))
        scaled = grid.kabs[None] * 2.0 ** (-P.js.reshape((-1,) + (1,) * grid.d).astype(float))
        outside = (scaled < 0.75) | (scaled > 8.0 / 3.0)
        support_bad += int(np.count_nonzero(w[outside]))
        max_active = max(max_active, int((w > 0).sum(axis=0)[nz].max()))
    at_half = float(phi(np.array([0.5]))[0])
    passed = (worst_sum <= 1e-12 and sq_min >= 0.5 - 1e-12 and sq_max <= 1 + 1e-12
              and support_bad == 0 and max_active <= 2 and at_half == 0.0)
    return CheckResult(1, "partition of unity", passed,
                       {"max_sum_defect": worst_sum, "min_sum_sq": sq_min, "max_sum_sq": sq_max,
                        "support_violations": support_bad, "max_active_blocks": max_active},
                       {"sum_defect": 1e-12, "sum_sq": [0.5, 1.0]})


def check_dn_linearization(seed: int, config: SolverConfig) -> CheckResult:
    grid = TorusGrid(128)
    f = SpectralField.from_modes(grid, [(2, 1.0, 0.0)])
    base = SpectralField.from_modes(grid, [(1, 1.0, 0.0)])
    amps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
    df = abs_derivative(f)
    values = [_b(dn_apply(base * a, f, config=config) - df, 1.0) for a in amps]
    fit = loglog_fit(amps, values, min_r2=0.0)
    passed = 0.9 <= fit.slope <= 1.1 and fit.r2 >= 0.99
    return CheckResult(2, "DN linearization slope", passed,
                       {"slope": fit.slope, "r2": fit.r2, "amplitudes": amps, "values": values},
                       {"slope": [0.9, 1.1], "r2": 0.99})


def check_oracle(seed: int, config: SolverConfig, cases: int = 10, n: int = 256) -> CheckResult:
    rng = np.random.default_rng(seed)
    grid = TorusGrid(n)
    errs = []
    for _ in range(cases):
        eta = scaled_random(grid, rng, 0.05 * rng.uniform(0.5, 1.0), "DB0")
        f = random_trig_polynomial(grid, rng, 4, 4)
        spec = dn_apply(eta, f, config=config).physical()
        fd = fd_dn(eta, f, n, n, grid=grid).physical()
        errs.append(float(np.max(np.abs(spec - fd)) / np.max(np.abs(spec))))
    worst = max(errs)
    return CheckResult(3, "spectral DN vs finite-difference oracle", worst <= 5e-3,
                       {"max_rel_sup_error": worst, "errors": errs, "N": n, "nz": n},
                       {"max_rel_sup_error": 5e-3})


def check_potential_contraction(seed: int, config: SolverConfig, cases: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed + 1)
    grid = TorusGrid(64)
    cfg = config.with_(dn_tol=1e-12, dn_max_iter=40)
    ratios, iters, ok = [], [], True
    sizes = [0.1] + [0.1 * rng.uniform(0.2, 1.0) for _ in range(cases - 1)]
    for size in sizes:
        eta = scaled_random(grid, rng, size, "DB0")
        f = random_trig_polynomial(grid, rng, 4, 4)
        pot = solve_potential(eta, f, config=cfg)
        ratios.append(pot.contraction_ratio)
        iters.append(pot.iterations)
        ok = ok and pot.converged
    passed = ok and max(ratios) <= 0.5 and max(iters) <= 40
    return CheckResult(4, "potential fixed-point contraction", passed,
                       {"max_ratio": max(ratios), "max_iterations": max(iters), "all_converged": ok,
                        "ratios": ratios},
                       {"ratio": 0.5, "iterations": 40, "tol": 1e-12, "smallness": 0.1})


def check_global_picard(seed: int, config: SolverConfig, cases: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed + 2)
    grid = TorusGrid(32)
    params = PhysicalParams.one_phase(rho_minus=5.0)
    worst_ratio, worst_bound, worst_change = 0.0, 0.0, 0.0
    for _ in range(cases):
        eta0 = scaled_random(grid, rng, 0.05)
        x1 = {}
        for T in (1.0, 2.0):
            path = solve_global_picard(eta0, T, int(64 * T), params=params, config=config)
            worst_ratio = max(worst_ratio, path.contraction_ratio)
            worst_bound = max(worst_bound, path.x1_kappa() / 0.05)
            x1[T] = path.x1_kappa()
        worst_change = max(worst_change, abs(x1[2.0] - x1[1.0]) / x1[1.0])
    passed = worst_ratio <= 0.5 and worst_bound <= 2.2 and worst_change <= 0.01
    return CheckResult(5, "global Picard on the mild form", passed,
                       {"max_ratio": worst_ratio, "max_x1_over_data": worst_bound,
                        "max_T_doubling_change": worst_change, "kappa": params.kappa},
                       {"ratio": 0.5, "x1_over_data": 2.2, "T_doubling_change": 0.01})


def check_linear_deviation(seed: int, config: SolverConfig) -> CheckResult:
    rng = np.random.default_rng(seed + 3)
    grid = TorusGrid(32)
    base = scaled_random(grid, rng, 1.0)
    eps = [1e-3, 3e-3, 1e-2, 3e-2]
    fit = epsilon_scaling_probe("mild_deviation", eps, base, None, min_r2=0.0, T=1.0, K=32, config=config)
    passed = 1.9 <= fit.slope <= 2.1 and fit.r2 >= 0.99
    return CheckResult(6, "deviation from the linear flow", passed,
                       {"slope": fit.slope, "r2": fit.r2, "values": list(fit.values)},
                       {"slope": [1.9, 2.1], "r2": 0.99})


def check_two_phase_rates(seed: int, config: SolverConfig) -> CheckResult:
    rng = np.random.default_rng(seed + 4)
    grid = TorusGrid(32)
    params = PhysicalParams(mu_plus=1.0, mu_minus=1.0, rho_plus=0.0, rho_minus=1.0)
    modes = [(k, 1.0, float(rng.uniform(0, 2 * math.pi))) for k in range(1, 9)]
    eta0 = SpectralField.from_modes(grid, modes)
    eta0 = eta0 * (1e-4 / _b(eta0, 1.0))
    path = solve_global_picard(eta0, 1.0, 16, problem="two_phase", params=params, config=config)
    rates = modal_decay_rates(path, range(1, 9))
    errs = {k: abs(r - params.kappa * k) / (params.kappa * k) for k, r in rates.items()}
    worst = max(errs.values())
    return CheckResult(7, "two-phase linear decay rates", worst <= 0.01,
                       {"max_rel_rate_error": worst, "rates": [rates[k] for k in sorted(rates)],
                        "kappa": params.kappa},
                       {"rel_rate_error": 0.01, "modes": "1..8"})


def check_degenerate_limit(seed: int, config: SolverConfig) -> CheckResult:
    rng = np.random.default_rng(seed + 5)
    grid = TorusGrid(64)
    params = PhysicalParams(mu_plus=1e-8, mu_minus=1.0, rho_plus=0.0, rho_minus=1.0)
    eta = scaled_random(grid, rng, 1e-3)
    f_minus = solve_f_minus(eta, params, config=config)
    target = eta * params.rho_minus
    rel = _b(f_minus - target, 1.0) / _b(target, 1.0)
    rhs = two_phase_rhs(eta, params, config=config)
    one = dn_apply(eta, eta, config=config) * (-params.rho_minus / params.mu_minus)
    gap = (rhs - one).sup()
    passed = rel <= 1e-2 and gap <= 1e-6
    return CheckResult(8, "two-phase degenerate limit", passed,
                       {"f_minus_rel_dev": rel, "rhs_abs_gap": gap},
                       {"f_minus_rel_dev": 1e-2, "rhs_abs_gap": 1e-6})


def _stability_ratio(a: SpectralField, b: SpectralField, K: int, params, config) -> float:
    from .evolution import stability_probe
    return stability_probe(a, b, 1.0, "one_phase", params, K, config).ratio


def check_stability(seed: int, config: SolverConfig, pairs: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed + 6)
    coarse, fine = TorusGrid(32), TorusGrid(64)
    params = PhysicalParams.one_phase()
    r_c, r_f = [], []
    for _ in range(pairs):
        a = scaled_random(coarse, rng, 0.03)
        b = a + scaled_random(coarse, rng, 0.01)
        r_c.append(_stability_ratio(a, b, 16, params, config))
        r_f.append(_stability_ratio(resample(a, fine), resample(b, fine), 32, params, config))
    finite = all(math.isfinite(r) for r in r_c + r_f)
    var = max(abs(f - c) / c for c, f in zip(r_c, r_f))
    passed = finite and var <= 0.2 and max(r_c + r_f) <= config.c_stab
    return CheckResult(9, "Lipschitz stability of the solution map", passed,
                       {"max_ratio": max(r_c + r_f), "max_refinement_change": var, "all_finite": finite,
                        "ratios_coarse": r_c, "ratios_fine": r_f},
                       {"refinement_change": 0.2, "c_stab": config.c_stab})


def check_scaling(seed: int, config: SolverConfig) -> CheckResult:
    rng = np.random.default_rng(seed + 7)
    lam = 2.0
    grid = TorusGrid(32)
    small = TorusGrid(32, L=grid.L / lam)
    eta0 = scaled_random(grid, rng, 0.04)
    ref = solve_global_picard(eta0, 1.0, 32, config=config)
    eta0_s = SpectralField(small, eta0.coeffs / lam, True)
    run = solve_global_picard(eta0_s, 1.0 / lam, 32, config=config)
    remapped = SpectralField(small, ref.final.coeffs / lam, True)
    mismatch = _b(run.final - remapped, 1.0)
    limit = 5.0 * config.picard_tol
    return CheckResult(10, "parabolic scaling invariance", mismatch <= limit,
                       {"terminal_B1_mismatch": mismatch, "lambda": lam},
                       {"terminal_B1_mismatch": limit})


def contraction_constant(eta1: SpectralField, eta2: SpectralField, f: SpectralField,
                         config: SolverConfig = DEFAULT) -> float:
    """Measured constant of the r = 1 remainder-difference bound.

    ``||[R(eta1) - R(eta2)] f||_{B^1}`` divided by
    ``A_1 ||D eta_d||_{B^0} ||D f||_{B^0} + ||D eta_d||_{B^0} ||D f||_{B^1} + ||D eta_d||_{B^1} ||D f||_{B^0}``
    with ``A_1 = ||D eta1||_{B^1} + ||D eta2||_{B^1}``.
    """
    lhs = _b(dn_remainder(eta1, f, config) - dn_remainder(eta2, f, config), 1.0)
    D = abs_derivative
    d = eta1 - eta2
    a1 = _b(D(eta1), 1.0) + _b(D(eta2), 1.0)
    rhs = (a1 * _b(D(d), 0.0) * _b(D(f), 0.0) + _b(D(d), 0.0) * _b(D(f), 1.0)
           + _b(D(d), 1.0) * _b(D(f), 0.0))
    return lhs / rhs


def check_remainder_contraction(seed: int, config: SolverConfig, cases: int = 8) -> CheckResult:
    rng = np.random.default_rng(seed + 8)
    base = TorusGrid(128)
    suite = []
    for _ in range(cases):
        e1 = scaled_random(base, rng, 0.05 * rng.uniform(0.3, 1.0), "DB0")
        e2 = scaled_random(base, rng, 0.05 * rng.uniform(0.3, 1.0), "DB0")
        f = random_trig_polynomial(base, rng, 4, 4)
        suite.append((e1, e2, f))
    consts = {}
    for n in (128, 256):
        g = TorusGrid(n)
        consts[n] = [contraction_constant(resample(a, g), resample(b, g), resample(f, g), config)
                     for a, b, f in suite]
    finite = all(math.isfinite(c) for v in consts.values() for c in v)
    c128, c256 = max(consts[128]), max(consts[256])
    change = abs(c256 - c128) / c128
    passed = finite and change <= 0.3
    return CheckResult(11, "remainder contraction constant", passed,
                       {"max_constant_N128": c128, "max_constant_N256": c256, "change": change,
                        "all_finite": finite, "constants_N128": consts[128]},
                       {"change": 0.3})


CRITERIA: dict[int, Callable[[int, SolverConfig], CheckResult]] = {
    1: check_partition,
    2: check_dn_linearization,
    3: check_oracle,
    4: check_potential_contraction,
    5: check_global_picard,
    6: check_linear_deviation,
    7: check_two_phase_rates,
    8: check_degenerate_limit,
    9: check_stability,
    10: check_scaling,
    11: check_remainder_contraction,
}

# wall-clock budgets in seconds, checked by the test suite only
RUNTIME_LIMITS = {1: 1.0, 2: 30.0, 3: 120.0, 5: 120.0, 6: 120.0, 7: 60.0, 8: 30.0}


def run_criterion(cid: int, seed: int = 0, config: SolverConfig = DEFAULT) -> CheckResult:
    t0 = time.perf_counter()
    result = CRITERIA[cid](seed, config)
    result.seconds = time.perf_counter() - t0
    log.info("%s (%.1f s)", result.line(), result.seconds)
    return result


def run_suite(ids=None, seed: int = 0, config: SolverConfig = DEFAULT,
              on_result: Optional[Callable[[CheckResult], None]] = None) -> list:
    out = []
    for cid in sorted(CRITERIA if ids is None else ids):
        res = run_criterion(cid, seed, config)
        if on_result is not None:
            on_result(res)
        out.append(res)
    return out


def report(results: list, seed: int, config: SolverConfig) -> dict:
    return {
        "seed": seed,
        "config": _jsonable(config.as_dict()),
        "all_passed": all(r.passed for r in results),
        "criteria": [r.as_dict() for r in results],
    }
