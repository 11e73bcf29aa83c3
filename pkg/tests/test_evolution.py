import math

import numpy as np
import pytest

from muskat.besov import besov_norm, partition_for
from muskat.errors import DataTooLarge, SmallnessViolated
from muskat.evolution import (
    SolutionPath,
    accepted,
    duhamel_map,
    linear_flow,
    march,
    modal_decay_rates,
    run_summary,
    solve_global_picard,
    stability_probe,
    step_march,
    uniform_times,
)
from muskat.spectral_core import PhysicalParams, SpectralField, TorusGrid, resample, translate
from muskat.verification import scaled_random

G = TorusGrid(32)
ONE = PhysicalParams.one_phase()


def modes(*spec, grid=G):
    return SpectralField.from_modes(grid, spec)


def b1(u):
    return besov_norm(u, 1.0, partition_for(u.grid))


BASE = modes((1, 1.0, 0.0), (2, 0.5, 0.3), (3, 0.2, 1.1))
BASE = BASE / b1(BASE)


def constant_path(eta0, K=8, T=1.0):
    times = uniform_times(T, K)
    return SolutionPath(times, np.stack([eta0.coeffs] * (K + 1)), eta0.grid, ONE, "one_phase")


class TestDuhamel:
    def test_zero(self):
        zero = SpectralField.zeros(G)
        out = duhamel_map(constant_path(zero), zero)
        assert np.all(out.coeffs == 0)

    def test_linear_part_exact(self):
        eta0 = BASE * 0.01
        out = duhamel_map(constant_path(eta0), eta0, nonlinear=False)
        for t, u in zip(out.times, out.etas):
            assert np.allclose(u.coeffs, linear_flow(eta0, ONE.kappa, t).coeffs, rtol=0, atol=1e-17)

    def test_one_application_is_quadratic(self):
        changes = []
        for amp in (1e-3, 2e-3):
            eta0 = BASE * amp
            out = duhamel_map(constant_path(eta0), eta0)
            lin = duhamel_map(constant_path(eta0), eta0, nonlinear=False)
            changes.append(max(b1(u - v) for u, v in zip(out.etas, lin.etas)))
        assert changes[0] <= 10 * 1e-3**2
        assert 1.9 <= math.log2(changes[1] / changes[0]) <= 2.1


class TestGlobalPicard:
    def test_zero_data(self):
        path = solve_global_picard(SpectralField.zeros(G), 1.0, 8)
        assert np.all(path.coeffs == 0)

    def test_contracts_at_delta(self):
        path = solve_global_picard(BASE * 0.05, 1.0, 16)
        assert path.converged and path.contraction_ratio <= 0.5
        assert accepted(path, BASE * 0.05)
        assert all(u.coeffs[0] == 0 for u in path.etas)
        assert math.isfinite(path.report.x1_kappa[-1])

    def test_deviation_constant_stable_under_refinement(self):
        eta0 = BASE * 0.01
        consts = []
        for K in (16, 32):
            path = solve_global_picard(eta0, 1.0, K)
            dev = max(b1(u - linear_flow(eta0, ONE.kappa, t)) for t, u in zip(path.times, path.etas))
            consts.append(dev / 0.01**2)
        assert abs(consts[1] - consts[0]) <= 0.1 * consts[0]

    def test_data_too_large(self):
        with pytest.raises(DataTooLarge) as info:
            solve_global_picard(BASE * 0.06, 1.0, 8)
        assert info.value.index == 0

    def test_two_phase_run(self):
        params = PhysicalParams(mu_plus=0.5, mu_minus=1.0, rho_plus=0.0, rho_minus=1.5)
        path = solve_global_picard(BASE * 0.01, 0.5, 8, problem="two_phase", params=params)
        assert path.converged and path.contraction_ratio <= 0.5

    def test_unknown_problem(self):
        with pytest.raises(ValueError):
            solve_global_picard(BASE * 0.01, 1.0, 8, problem="three_phase")

    def test_summary_keys(self):
        path = solve_global_picard(BASE * 0.01, 1.0, 8)
        summary = run_summary(path, BASE * 0.01)
        assert set(summary) == {"problem", "N", "K", "T", "kappa", "delta", "iterations",
                                "contraction_ratio", "x1_kappa_final", "accepted"}
        assert summary["accepted"] is True

    def test_modewise_decay(self):
        # every dealiased mode is excited so the slack is relative to a nonzero start
        eta0 = modes(*[(k, 1.0, 0.4 * k) for k in range(1, 11)])
        eta0 = eta0 * (1e-4 / b1(eta0))
        path = solve_global_picard(eta0, 1.0, 16)
        start, end = np.abs(path.coeffs[0]), np.abs(path.coeffs[-1])
        live = start > 0
        assert np.all(end[live] <= start[live] * (1 + 10 * 1e-4))
        lin = march(eta0, 1.0, 16, nonlinear=False).final
        assert np.all(np.abs(lin.coeffs) <= start)

    def test_linear_rates(self):
        path = solve_global_picard(BASE * 1e-5, 1.0, 16)
        rates = modal_decay_rates(path, [1, 2, 3])
        for k, r in rates.items():
            assert r == pytest.approx(ONE.kappa * k, rel=1e-3)

    def test_time_continuity(self):
        jumps = []
        for K in (8, 16, 32):
            path = solve_global_picard(BASE * 0.02, 1.0, K)
            jumps.append(max(b1(path.etas[i + 1] - path.etas[i]) for i in range(K)))
        assert jumps[0] > jumps[1] > jumps[2]
        assert jumps[2] <= 0.6 * jumps[1]

    def test_translation_equivariance(self):
        eta0 = BASE * 0.02
        a = solve_global_picard(translate(eta0, 0.9), 1.0, 8).final
        b = translate(solve_global_picard(eta0, 1.0, 8).final, 0.9)
        assert np.max(np.abs(a.coeffs - b.coeffs)) <= 1e-12 * np.max(np.abs(b.coeffs))


class TestMarch:
    def test_zero(self):
        out = step_march(SpectralField.zeros(G), 0.1)
        assert np.all(out.coeffs == 0)

    def test_linear_mode(self):
        eta = modes((3, 0.01, 0.2))
        out = step_march(eta, 0.25, nonlinear=False)
        assert np.allclose(out.coeffs, eta.coeffs * math.exp(-0.25 * 3), rtol=1e-15, atol=0)

    def test_second_order(self):
        eta0 = BASE * 0.04
        ref = march(eta0, 1.0, 256).final
        errs = [b1(march(eta0, 1.0, n).final - ref) for n in (4, 8, 16)]
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert all(1.8 <= p <= 2.2 for p in orders)

    def test_agrees_with_picard(self):
        eta0 = BASE * 0.04
        K = 32
        picard = solve_global_picard(eta0, 1.0, K).final
        stepped = march(eta0, 1.0, K).final
        tol = max(10 * 1e-10, (1.0 / K) ** 2) * b1(eta0)
        assert b1(picard - stepped) <= tol

    def test_smallness_index(self):
        big = scaled_random(G, np.random.default_rng(0), 0.3)
        with pytest.raises(SmallnessViolated) as info:
            march(big, 1.0, 4)
        assert info.value.index == 0

    def test_bad_step(self):
        with pytest.raises(ValueError):
            step_march(BASE, 0.0)


class TestStability:
    def test_identical(self):
        res = stability_probe(BASE * 0.01, BASE * 0.01, 1.0, K=8)
        assert res.identical and res.ratio == 0.0

    def test_small_perturbation(self):
        a = BASE * 0.03
        bump = modes((5, 1e-6, 0.0))
        coarse = stability_probe(a, a + bump, 1.0, K=16).ratio
        fine_grid = TorusGrid(64)
        fa = resample(a, fine_grid)
        fine = stability_probe(fa, fa + resample(bump, fine_grid), 1.0, K=32).ratio
        assert math.isfinite(coarse) and math.isfinite(fine)
        assert abs(fine - coarse) <= 0.2 * coarse
