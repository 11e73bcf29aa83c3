import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from muskat.besov import besov_norm, partition_for
from muskat.errors import GridMismatch, NegativeTime, SingularZeroMode
from muskat.spectral_core import (
    PhysicalParams,
    SpectralField,
    StripGrid,
    TorusGrid,
    abs_derivative,
    apply_multiplier,
    dealiased_product,
    exp_quadrature_step,
    exp_quadrature_weights,
    gradient,
    poisson_semigroup,
    random_trig_polynomial,
    resample,
    riesz,
    translate,
)

G64 = TorusGrid(64)
X = G64.points[0]


def field(func, grid=G64, mean_zero=False):
    return SpectralField.from_function(grid, func, mean_zero)


seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestGrids:
    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError, match="power of two"):
            TorusGrid(12)
        with pytest.raises(ValueError):
            TorusGrid(4)
        with pytest.raises(ValueError):
            TorusGrid(16, L=-1.0)
        with pytest.raises(ValueError):
            TorusGrid(16, d=3)

    def test_wavevectors_are_integer_multiples(self):
        g = TorusGrid(16, L=math.pi)
        k = g.wavevectors[0] / g.k_min
        assert np.allclose(k, np.round(k))
        assert g.kabs[0] == 0.0

    def test_strip_nodes(self):
        strip = StripGrid(TorusGrid(32), M=33)
        z = strip.nodes
        assert z[0] == 0.0 and z[-1] == -strip.Z
        assert np.all(np.diff(z) < 0)
        assert math.exp(-strip.Z * strip.torus.k_min) <= 1e-12

    def test_shallow_strip_rejected(self):
        with pytest.raises(ValueError, match="too shallow"):
            StripGrid(TorusGrid(32), M=33, Z=5.0)

    def test_refined_strip_contains_coarse_nodes(self):
        strip = StripGrid(TorusGrid(16), M=9)
        fine = strip.refined(2)
        assert fine.M == 17
        assert np.allclose(fine.nodes[::2], strip.nodes, atol=1e-14 * strip.Z)


class TestFields:
    def test_hermitian_and_mean_zero(self):
        u = field(lambda x: 1.0 + np.cos(x), mean_zero=True)
        assert u.coeffs[0] == 0.0
        assert u.hermitian_defect() < 1e-13

    def test_from_modes_matches_function(self):
        u = SpectralField.from_modes(G64, [(3, 0.5, 0.2)])
        assert np.allclose(u.physical(), 0.5 * np.cos(3 * X + 0.2), atol=1e-14)

    def test_unresolved_mode(self):
        with pytest.raises(ValueError, match="not resolved"):
            SpectralField.from_modes(TorusGrid(8), [(4, 1.0, 0.0)])

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            SpectralField.zeros(G64) + SpectralField.zeros(TorusGrid(32))

    @settings(max_examples=30, deadline=None)
    @given(seeds)
    def test_round_trip(self, seed):
        vals = np.random.default_rng(seed).standard_normal(64)
        back = SpectralField.from_physical(G64, vals).physical()
        assert np.max(np.abs(back - vals)) <= 1e-12 * np.max(np.abs(vals))

    def test_resample_keeps_polynomial(self):
        u = random_trig_polynomial(TorusGrid(32), np.random.default_rng(0), 5, 6)
        v = resample(u, TorusGrid(128))
        assert np.allclose(v.physical()[::4], u.physical(), atol=1e-14)

    def test_translate_is_a_shift(self):
        u = SpectralField.from_modes(G64, [(2, 1.0, 0.0), (5, 0.3, 1.0)])
        shifted = translate(u, 0.7)
        ref = np.cos(2 * (X - 0.7)) + 0.3 * np.cos(5 * (X - 0.7) + 1.0)
        assert np.allclose(shifted.physical(), ref, atol=1e-13)

    def test_params_kappa(self):
        p = PhysicalParams(mu_plus=1.0, mu_minus=3.0, rho_plus=1.0, rho_minus=5.0)
        assert p.kappa == 1.0 and p.jump == 4.0
        with pytest.raises(ValueError, match="stable"):
            PhysicalParams(rho_plus=2.0, rho_minus=1.0)


class TestMultipliers:
    def test_identity(self):
        u = field(lambda x: np.sin(x) + 0.2 * np.cos(7 * x))
        assert np.allclose(apply_multiplier(u, 1.0).coeffs, u.coeffs)

    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_abs_derivative_on_cosine(self, k):
        u = field(lambda x: np.cos(k * x))
        out = apply_multiplier(u, lambda xi: np.abs(xi[0]))
        assert np.allclose(out.physical(), k * np.cos(k * X), atol=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 5])
    def test_riesz_on_sine(self, k):
        # d_x sin(kx) = k cos(kx), then |D|^{-1} divides by k
        u = field(lambda x: np.sin(k * x), mean_zero=True)
        out = riesz([u])
        assert np.allclose(out.physical(), np.cos(k * X), atol=1e-13)
        via_symbol = apply_multiplier(u, lambda xi: 1j * xi[0] / np.abs(xi[0]))
        assert np.allclose(via_symbol.physical(), out.physical(), atol=1e-13)

    def test_singular_symbol_needs_mean_zero(self):
        u = field(lambda x: 1.0 + np.cos(x))
        with pytest.raises(SingularZeroMode):
            apply_multiplier(u, lambda xi: 1.0 / np.abs(xi[0]))

    def test_gradient_two_d(self):
        g = TorusGrid(16, d=2)
        x, y = g.points
        u = SpectralField.from_function(g, lambda x, y: np.sin(x) * np.cos(2 * y))
        gx, gy = gradient(u)
        assert np.allclose(gx.physical(), np.cos(x) * np.cos(2 * y), atol=1e-13)
        assert np.allclose(gy.physical(), -2 * np.sin(x) * np.sin(2 * y), atol=1e-13)

    @settings(max_examples=25, deadline=None)
    @given(seeds, st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        u = random_trig_polynomial(G64, rng, 4, 10)
        v = random_trig_polynomial(G64, rng, 4, 10)
        m = lambda xi: np.abs(xi[0]) ** 1.5 + 1j * xi[0]  # noqa: E731
        lhs = apply_multiplier(u * a + v * b, m)
        rhs = apply_multiplier(u, m) * a + apply_multiplier(v, m) * b
        scale = max(1.0, np.max(np.abs(lhs.coeffs)))
        assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) <= 1e-12 * scale


class TestSemigroup:
    def test_zero_time(self):
        u = field(lambda x: np.cos(x) + np.sin(4 * x))
        assert np.allclose(poisson_semigroup(u, 0.0).coeffs, u.coeffs)

    def test_single_mode(self):
        u = field(lambda x: np.cos(3 * x))
        assert np.allclose(poisson_semigroup(u, 1.0, 1.0).physical(), math.exp(-3) * np.cos(3 * X), atol=1e-14)

    def test_negative_time(self):
        with pytest.raises(NegativeTime):
            poisson_semigroup(SpectralField.zeros(G64), -1.0)

    @settings(max_examples=30, deadline=None)
    @given(seeds, st.floats(0.0, 5.0))
    def test_sup_norm_does_not_grow(self, seed, t):
        u = random_trig_polynomial(G64, np.random.default_rng(seed), 6, 12)
        assert poisson_semigroup(u, t).sup() <= u.sup() * (1 + 1e-10)

    def test_block_decay_rate(self):
        rng = np.random.default_rng(3)
        g = TorusGrid(256)
        P = partition_for(g)
        modes = [(k, rng.uniform(0.2, 1.0), rng.uniform(0, 2 * math.pi)) for k in range(1, 100)]
        u = SpectralField.from_modes(g, modes)
        for j in range(1, 6):
            block = SpectralField(g, u.coeffs * P.weight(j), True)
            ts = np.linspace(0.0, 8.0 * 2.0**-j, 17)
            logs = [math.log(poisson_semigroup(block, t).sup() / block.sup()) for t in ts]
            c = -np.polyfit(ts * 2.0**j, logs, 1)[0]
            assert c >= 0.7


class TestProducts:
    def test_zero(self):
        u = field(lambda x: np.cos(x))
        assert np.all(dealiased_product(u, SpectralField.zeros(G64, False)).coeffs == 0)

    def test_product_to_sum(self):
        u = field(lambda x: np.cos(x), TorusGrid(8))
        out = dealiased_product(u, u)
        ref = 0.5 + 0.5 * np.cos(2 * TorusGrid(8).points[0])
        assert np.allclose(out.physical(), ref, atol=1e-14)

    def test_besov_product_rule(self):
        rng = np.random.default_rng(11)
        P = partition_for(G64)
        worst = 0.0
        for _ in range(100):
            u = random_trig_polynomial(G64, rng, 4, 10)
            v = random_trig_polynomial(G64, rng, 4, 10)
            lhs = besov_norm(dealiased_product(u, v), 1.0, P)
            rhs = u.sup() * besov_norm(v, 1.0, P) + v.sup() * besov_norm(u, 1.0, P)
            worst = max(worst, lhs / rhs)
        assert worst <= 10.0


class TestExpQuadrature:
    def test_trapezoid_limit(self):
        assert exp_quadrature_step(0.0, 1.0, 1.0, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_constant_forcing(self):
        assert exp_quadrature_step(1.0, 1.0, 1.0, 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)

    def test_series_branch(self):
        # r h = 1e-6: exact value is h (phi1 - psi) = h (1/2 - x/6 + ...), evaluated in 50 digits
        mpmath.mp.dps = 50
        h, x = mpmath.mpf("1e-3"), mpmath.mpf("1e-6")
        ref = h * ((1 - mpmath.e**-x) / x - (1 - (1 + x) * mpmath.e**-x) / x**2)
        val = exp_quadrature_step(1e-6 / 1e-3, 0.0, 1.0, 1e-3)
        assert abs(val - float(ref)) <= 1e-10 * float(ref)
        assert abs(val - 5e-4) <= 1e-6 * 5e-4

    @pytest.mark.parametrize("x", [0.0, 1e-8, 5e-5, 1e-4, 2e-4, 0.3, 1.0, 7.5, 50.0])
    def test_against_adaptive_quadrature(self, x):
        h = 0.37
        r = x / h
        a, b = 1.3, -0.4
        ref, _ = quad(lambda s: math.exp(-r * (h - s)) * ((1 - s / h) * a + (s / h) * b), 0, h,
                      epsabs=0, epsrel=1e-13)
        assert exp_quadrature_step(r, a, b, h) == pytest.approx(ref, rel=1e-10)

    def test_weights_broadcast(self):
        wa, wb = exp_quadrature_weights(np.array([0.0, 1.0, 10.0]), 0.5)
        assert wa.shape == wb.shape == (3,)
        assert wa[0] == pytest.approx(0.25) and wb[0] == pytest.approx(0.25)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            exp_quadrature_step(-1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            exp_quadrature_step(1.0, 1.0, 1.0, 0.0)


def test_abs_derivative_drops_mean():
    u = field(lambda x: 2.0 + np.cos(2 * x))
    d = abs_derivative(u)
    assert d.mean == 0.0
    assert np.allclose(d.physical(), 2 * np.cos(2 * X), atol=1e-13)
