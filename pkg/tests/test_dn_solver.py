import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from muskat.besov import besov_norm, partition_for
from muskat.config import DEFAULT
from muskat.dn_solver import (
    Geometry,
    apply_T,
    coefficient_matrix,
    default_strip,
    diffeo_check,
    dn_apply,
    dn_direct,
    dn_remainder,
    dump_strip_csv,
    lift_eta,
    q_forms,
    solve_potential,
)
from muskat.errors import DenominatorTooSmall, SmallnessViolated
from muskat.oracle_fd import fd_dn, loglog_fit
from muskat.spectral_core import (
    SpectralField,
    StripField,
    StripGrid,
    TorusGrid,
    abs_derivative,
    inverse,
    random_trig_polynomial,
)
from muskat.verification import contraction_constant, scaled_random

G = TorusGrid(64)
X = G.points[0]
STRIP = default_strip(G)


def modes(*spec, grid=G):
    return SpectralField.from_modes(grid, spec)


def b(u, s):
    return besov_norm(u, s, partition_for(u.grid))


def strip_sup(values) -> float:
    return float(np.max(np.abs(values)))


class TestLiftAndGeometry:
    def test_flat_lift(self):
        assert np.all(lift_eta(SpectralField.zeros(G), STRIP).coeffs == 0)

    def test_single_mode_lift(self):
        H = lift_eta(modes((3, 1.0, 0.0)), STRIP).physical()
        z = STRIP.nodes[:, None]
        assert np.allclose(H, np.exp(3 * z) * np.cos(3 * X)[None], atol=1e-14)

    def test_lift_bound(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(20):
            eta = scaled_random(G, rng, 0.05 * rng.uniform(0.2, 1.0), "DB0")
            top = strip_sup(inverse(G.kabs * lift_eta(eta, STRIP).coeffs, 1))
            worst = max(worst, top / b(abs_derivative(eta), 0.0))
        assert worst <= 2.0

    def test_diffeo_flat(self):
        rep = diffeo_check(SpectralField.zeros(G), STRIP)
        assert rep.ok and rep.min_dz_rho == pytest.approx(1.0)

    def test_diffeo_small(self):
        rep = diffeo_check(modes((1, 0.05, 0.0)), STRIP)
        assert rep.ok and rep.min_dz_rho >= 0.95

    def test_diffeo_large(self):
        # at z = 0, x = pi: 1 + 2 cos(pi) = -1
        rep = diffeo_check(modes((1, 2.0, 0.0)), STRIP)
        assert not rep.ok and rep.min_dz_rho <= -1.0 + 1e-12

    def test_denominator_guard(self):
        with pytest.raises(DenominatorTooSmall):
            Geometry(STRIP, np.asarray(modes((1, 0.8, 0.0)).coeffs)[None])

    def test_coefficient_matrix_flat(self):
        A = coefficient_matrix(SpectralField.zeros(G), STRIP).entries
        assert np.allclose(A, np.eye(2)[:, :, None, None] * np.ones(A.shape[2:]))

    def test_coefficient_matrix_one_d(self):
        A = coefficient_matrix(modes((1, 0.05, 0.0), (3, 0.02, 1.0)), STRIP)
        assert A.asymmetry() == 0.0
        assert np.max(np.abs(A.det() - 1.0)) <= 1e-10
        assert A.min_eigenvalue() > 0

    def test_coefficient_matrix_two_d(self):
        g = TorusGrid(16, d=2)
        strip = StripGrid(g, M=17)
        eta = SpectralField.from_modes(g, [((1, 0), 0.05, 0.0), ((1, 2), 0.02, 0.4)])
        A = coefficient_matrix(eta, strip)
        dz_rho = 1.0 + inverse(g.kabs * lift_eta(eta, strip).coeffs, 2)
        assert np.max(np.abs(A.det() - dz_rho)) <= 1e-10
        assert A.min_eigenvalue() > 0


class TestQForms:
    def test_flat(self):
        v = StripField(STRIP, np.asarray(modes((2, 1.0, 0.0)).coeffs)[None] * np.exp(
            STRIP.nodes[:, None] * G.kabs[None]))
        qa, qb = q_forms(v, lift_eta(SpectralField.zeros(G), STRIP))
        assert np.all(qa.coeffs == 0) and np.all(qb.coeffs == 0)

    def test_linear_in_eta(self):
        f = modes((1, 1.0, 0.0))
        eta = modes((2, 1.0, 0.3), (3, 0.5, 0.0))
        eps = [1e-4, 1e-3, 5e-3, 2e-2]
        vals_a, vals_b = [], []
        for e in eps:
            pot = solve_potential(eta * e, f)
            qa, qb = q_forms(pot.v, pot.H, pot.dz_v)
            vals_a.append(qa.sup())
            vals_b.append(qb.sup())
        assert 0.9 <= loglog_fit(eps, vals_a).slope <= 1.1
        assert 0.9 <= loglog_fit(eps, vals_b).slope <= 1.1

    def test_leading_term(self):
        a = 0.01
        eta, f = modes((1, a, 0.0)), modes((1, 1.0, 0.0))
        z = STRIP.nodes[:, None]
        v = StripField(STRIP, np.asarray(f.coeffs)[None] * np.exp(z * G.kabs[None]))
        qa, _ = q_forms(v, lift_eta(eta, STRIP), StripField(STRIP, G.kabs[None] * v.coeffs))
        # grad H . grad v + |D|H d_z v at z = 0 with H = a cos x, v = cos x
        lead = a * np.sin(X) ** 2 + a * np.cos(X) * np.cos(X)
        assert np.max(np.abs(qa.physical()[0] - lead)) <= 5 * a**2


class TestFixedPoint:
    def test_flat_map(self):
        f = modes((2, 1.0, 0.0), (5, 0.1, 1.0))
        v = StripField(STRIP, np.random.default_rng(0).standard_normal((STRIP.M, G.N)).astype(complex))
        out = apply_T(v, SpectralField.zeros(G), f)
        assert np.allclose(out.coeffs, np.asarray(f.coeffs)[None] * np.exp(STRIP.nodes[:, None] * G.kabs[None]))

    def test_fixed_point_residual(self):
        eta, f = modes((1, 0.03, 0.0), (2, 0.01, 0.5)), modes((1, 1.0, 0.0))
        pot = solve_potential(eta, f, tol=1e-12)
        assert pot.converged and pot.residual <= 1e-12
        again = apply_T(pot, eta, f)
        assert strip_sup(again.physical() - pot.v.physical()) <= 1e-11
        assert np.max(np.abs(pot.v.physical()[0] - f.physical())) <= 1e-12

    def test_contraction_factor(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(8):
            eta = scaled_random(G, rng, 0.05 * rng.uniform(0.3, 1.0), "DB0")
            f = random_trig_polynomial(G, rng, 4, 4)
            lift = np.exp(STRIP.nodes[:, None] * G.kabs[None])
            v1 = StripField(STRIP, np.asarray(random_trig_polynomial(G, rng, 4, 6).coeffs)[None] * lift)
            v2 = StripField(STRIP, np.asarray(random_trig_polynomial(G, rng, 4, 6).coeffs)[None] * lift)
            num = strip_sup(apply_T(v1, eta, f).physical() - apply_T(v2, eta, f).physical())
            den = strip_sup(v1.physical() - v2.physical())
            worst = max(worst, num / den / b(abs_derivative(eta), 0.0))
        assert worst <= 10.0

    def test_flat_converges_at_once(self):
        f = modes((2, 1.0, 0.0))
        pot = solve_potential(SpectralField.zeros(G), f)
        assert pot.iterations == 1
        assert np.allclose(pot.v.coeffs, np.asarray(f.coeffs)[None] * np.exp(STRIP.nodes[:, None] * G.kabs[None]))

    def test_contracts_quickly(self):
        pot = solve_potential(modes((1, 0.05, 0.0)), modes((1, 1.0, 0.0)), tol=1e-12)
        assert pot.converged and pot.iterations <= 25 and pot.contraction_ratio <= 0.5

    def test_potential_bound(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(8):
            eta = scaled_random(G, rng, 0.05, "DB0")
            f = random_trig_polynomial(G, rng, 4, 6)
            pot = solve_potential(eta, f)
            size = max(strip_sup(inverse(G.kabs * pot.v.coeffs, 1)), pot.dz_v.sup())
            worst = max(worst, size / b(abs_derivative(f), 0.0))
        assert worst <= 5.0

    def test_smallness_enforced(self):
        eta = scaled_random(G, np.random.default_rng(0), 0.2, "DB0")
        with pytest.raises(SmallnessViolated) as info:
            solve_potential(eta, modes((1, 1.0, 0.0)))
        assert info.value.value > info.value.threshold


class TestRemainder:
    def test_flat(self):
        rem = dn_remainder(SpectralField.zeros(G), modes((3, 1.0, 0.0)))
        assert np.all(rem.coeffs == 0)

    def test_first_order_in_eta(self):
        # R^-(eps eta) f with eta = cos 3x, f = cos x carries a nonzero linear term
        f, eta = modes((1, 1.0, 0.0)), modes((3, 1.0, 0.0))
        eps = [1e-3, 3e-3, 1e-2, 3e-2]
        fit = loglog_fit(eps, [b(dn_remainder(eta * e, f), 1.0) for e in eps])
        assert 0.9 <= fit.slope <= 1.1

    def test_contraction_constant(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(6):
            e1 = scaled_random(G, rng, 0.04, "DB0")
            e2 = scaled_random(G, rng, 0.04, "DB0")
            f = random_trig_polynomial(G, rng, 4, 4)
            lhs = b(dn_remainder(e1, f) - dn_remainder(e2, f), 1.0)
            d = e1 - e2
            rhs = ((b(e1, 2.0) + b(e2, 2.0)) * b(f, 1.0) + b(d, 1.0) * b(f, 2.0) + b(d, 2.0) * b(f, 1.0))
            worst = max(worst, lhs / rhs)
        assert worst <= 20.0

    def test_measured_constant_matches_helper_form(self):
        rng = np.random.default_rng(1)
        e1, e2 = scaled_random(G, rng, 0.03, "DB0"), scaled_random(G, rng, 0.03, "DB0")
        c = contraction_constant(e1, e2, random_trig_polynomial(G, rng, 4, 4))
        assert 0.0 < c < 20.0


class TestDNApply:
    def test_flat(self):
        f = modes((2, 1.0, 0.0), (7, 0.2, 0.4))
        flat = SpectralField.zeros(G)
        assert np.allclose(dn_apply(flat, f).coeffs, abs_derivative(f).coeffs, atol=1e-15)
        assert np.allclose(dn_apply(flat, f, "plus").coeffs, -abs_derivative(f).coeffs, atol=1e-15)

    def test_against_oracle(self):
        g = TorusGrid(256)
        eta, f = modes((1, 0.05, 0.0), grid=g), modes((2, 1.0, 0.0), grid=g)
        spec = dn_apply(eta, f)
        fd = fd_dn(eta, f, 256, 256, grid=g)
        assert (spec - fd).sup() / spec.sup() <= 5e-3

    def test_self_adjoint(self):
        rng = np.random.default_rng(8)
        for _ in range(4):
            eta = scaled_random(G, rng, 0.05, "DB0")
            f, g = random_trig_polynomial(G, rng, 4, 5), random_trig_polynomial(G, rng, 4, 5)
            lhs = np.mean(dn_apply(eta, f).physical() * g.physical())
            rhs = np.mean(f.physical() * dn_apply(eta, g).physical())
            assert abs(lhs - rhs) <= 1e-6 * max(abs(lhs), abs(rhs))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_constants_and_mean(self, seed):
        rng = np.random.default_rng(seed)
        eta = scaled_random(G, rng, 0.05 * rng.uniform(0.1, 1.0), "DB0")
        const = SpectralField.from_physical(G, np.full(G.N, 2.5))
        assert np.max(np.abs(dn_apply(eta, const).coeffs)) == 0.0
        out = dn_apply(eta, random_trig_polynomial(G, rng, 4, 6))
        assert out.coeffs[0] == 0.0

    def test_plus_is_reflection(self):
        eta, f = modes((1, 0.04, 0.0), (2, 0.01, 1.0)), modes((1, 1.0, 0.3))
        assert np.allclose(dn_apply(eta, f, "plus").coeffs, -dn_apply(-eta, f).coeffs, atol=1e-15)

    @pytest.mark.parametrize("r", [0.0, 1.0])
    def test_corollary_bound(self, r):
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(6):
            eta = scaled_random(G, rng, 0.05, "DB0")
            f = random_trig_polynomial(G, rng, 4, 6)
            Df, De = abs_derivative(f), abs_derivative(eta)
            worst = max(worst, b(dn_apply(eta, f), r) / (b(Df, r) + b(De, r) * b(Df, 0.0)))
        assert math.isfinite(worst) and worst <= 10.0

    def test_z_refinement_is_second_order(self):
        cfg = DEFAULT.with_(z_richardson=False)
        eta, f = modes((1, 0.05, 0.0), (2, 0.02, 0.7)), modes((1, 1.0, 0.0))
        outs = [dn_apply(eta, f, config=cfg, strip=StripGrid(G, M=m)) for m in (33, 65, 129)]
        order = math.log2((outs[0] - outs[1]).sup() / (outs[1] - outs[2]).sup())
        assert 1.8 <= order <= 2.2

    def test_direct_extraction(self):
        eta, f = modes((1, 0.05, 0.0)), modes((2, 1.0, 0.0))
        pot = solve_potential(eta, f)
        assert pot.remainder_check <= 1e-10
        via_w = abs_derivative(f) + pot.remainder
        assert (dn_direct(pot) - via_w).sup() <= 1e-4 * via_w.sup()


def test_dump_strip_csv(tmp_path):
    pot = solve_potential(modes((1, 0.02, 0.0)), modes((1, 1.0, 0.0)), config=DEFAULT.with_(M=9))
    dump_strip_csv(pot, tmp_path / "strip.csv")
    with open(tmp_path / "strip.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["z", "x0", "H", "v", "w", "q_a", "q_b"]
    assert len(rows) == 1 + 9 * G.N
    assert float(rows[1][0]) == 0.0
