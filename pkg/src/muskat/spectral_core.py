"""Periodic spectral fields, Fourier multipliers and exponential quadrature.

Fields are real functions on the d-torus of period ``L`` stored as Fourier
coefficients normalised so that ``u(x) = sum_k c_k exp(i k.x)``.  The
solvers work on raw coefficient arrays whose last ``d`` axes are the
spatial modes; leading axes are batch / z-node axes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, NegativeTime, SingularZeroMode

__all__ = [
    "TorusGrid",
    "SpectralField",
    "StripGrid",
    "StripField",
    "PhysicalParams",
    "apply_multiplier",
    "abs_derivative",
    "gradient",
    "riesz",
    "poisson_semigroup",
    "dealiased_product",
    "exp_quadrature_weights",
    "exp_quadrature_step",
    "random_trig_polynomial",
    "resample",
    "translate",
]

# e^{-Z k_min} <= 1e-12 needs Z k_min >= 27.63; 28 keeps Z an exact multiple of L/2pi
STRIP_DEPTH_FACTOR = 28.0


def fft_workers() -> int:
    try:
        return max(1, int(os.environ.get("MUSKAT_THREADS", "1")))
    except ValueError:
        return 1


def forward(values: np.ndarray, d: int) -> np.ndarray:
    """Physical samples -> normalised coefficients over the last ``d`` axes."""
    axes = tuple(range(-d, 0))
    n = np.prod([values.shape[a] for a in axes])
    return sfft.fftn(values, axes=axes, workers=fft_workers()) / n


def inverse(coeffs: np.ndarray, d: int) -> np.ndarray:
    """Normalised coefficients -> real physical samples."""
    axes = tuple(range(-d, 0))
    n = np.prod([coeffs.shape[a] for a in axes])
    return sfft.ifftn(coeffs * n, axes=axes, workers=fft_workers()).real


def conj_reflect(coeffs: np.ndarray, d: int) -> np.ndarray:
    """Array whose entry at k is conj(c_{-k})."""
    out = coeffs
    for ax in range(-d, 0):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return np.conj(out)


def hermitian_part(coeffs: np.ndarray, d: int) -> np.ndarray:
    return 0.5 * (coeffs + conj_reflect(coeffs, d))


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the d-torus ``[0, L)^d`` with ``N`` points per axis."""

    N: int
    L: float = 2.0 * math.pi
    d: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def k_min(self) -> float:
        return 2.0 * math.pi / self.L

    @property
    def k_max(self) -> float:
        return math.sqrt(self.d) * (self.N // 2) * self.k_min

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Integer mode numbers, shape ``(d, *shape)``."""
        n1 = np.fft.fftfreq(self.N, 1.0 / self.N).round().astype(int)
        return np.stack(np.meshgrid(*([n1] * self.d), indexing="ij"))

    @cached_property
    def wavevectors(self) -> np.ndarray:
        return self.mode_index * self.k_min

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(np.sum(self.wavevectors**2, axis=0))

    @cached_property
    def kodd(self) -> np.ndarray:
        """Wavevectors with Nyquist components zeroed, for odd symbols."""
        k = self.wavevectors.copy()
        k[self.mode_index == -(self.N // 2)] = 0.0
        return k

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """True on modes kept by the 2/3 rule: ``|n_i| <= N/3`` on every axis."""
        cut = (2.0 / 3.0) * (self.N / 2)
        return np.all(np.abs(self.mode_index) <= cut, axis=0)

    @cached_property
    def points(self) -> np.ndarray:
        x1 = np.arange(self.N) * (self.L / self.N)
        return np.stack(np.meshgrid(*([x1] * self.d), indexing="ij"))

    def forward(self, values: np.ndarray) -> np.ndarray:
        return forward(np.asarray(values, dtype=float), self.d)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return inverse(coeffs, self.d)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A real periodic field held by its Fourier coefficients."""

    grid: TorusGrid
    coeffs: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise GridMismatch(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        if self.mean_zero:
            c[(0,) * self.grid.d] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # constructors -----------------------------------------------------
    @classmethod
    def from_physical(cls, grid: TorusGrid, values, mean_zero: bool = False) -> "SpectralField":
        return cls(grid, grid.forward(values), mean_zero)

    @classmethod
    def from_function(cls, grid: TorusGrid, func: Callable, mean_zero: bool = False) -> "SpectralField":
        return cls.from_physical(grid, func(*grid.points), mean_zero)

    @classmethod
    def zeros(cls, grid: TorusGrid, mean_zero: bool = True) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, complex), mean_zero)

    @classmethod
    def from_modes(cls, grid: TorusGrid, modes: Sequence, mean_zero: bool = True) -> "SpectralField":
        """Sum of ``amplitude * cos(k.x + phase)`` over ``(k, amplitude, phase)``.

        ``k`` is an integer mode number (d = 1) or a tuple of them.
        """
        c = np.zeros(grid.shape, complex)
        for k, amp, phase in modes:
            idx = np.atleast_1d(np.asarray(k, dtype=int))
            if idx.size != grid.d:
                raise ValueError(f"mode {k} does not have {grid.d} components")
            if np.any(np.abs(idx) >= grid.N // 2):
                raise ValueError(f"mode {k} is not resolved on N={grid.N}")
            c[tuple(idx % grid.N)] += 0.5 * amp * np.exp(1j * phase)
            c[tuple((-idx) % grid.N)] += 0.5 * amp * np.exp(-1j * phase)
        return cls(grid, c, mean_zero)

    # views ------------------------------------------------------------
    def physical(self) -> np.ndarray:
        return self.grid.inverse(self.coeffs)

    @property
    def mean(self) -> float:
        return float(self.coeffs[(0,) * self.grid.d].real)

    def sup(self) -> float:
        return float(np.max(np.abs(self.physical())))

    def hermitian_defect(self) -> float:
        """Relative violation of ``c_{-k} = conj(c_k)``."""
        scale = max(np.max(np.abs(self.coeffs)), np.finfo(float).tiny)
        return float(np.max(np.abs(self.coeffs - conj_reflect(self.coeffs, self.grid.d))) / scale)

    def with_coeffs(self, coeffs, mean_zero=None) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.mean_zero if mean_zero is None else mean_zero)

    def without_mean(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs, True)

    # arithmetic -------------------------------------------------------
    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise GridMismatch(f"{self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs + other.coeffs, self.mean_zero and other.mean_zero)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs - other.coeffs, self.mean_zero and other.mean_zero)
        return NotImplemented

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, self.mean_zero)

    def __mul__(self, scalar):
        if np.isscalar(scalar) and np.isreal(scalar):
            return SpectralField(self.grid, self.coeffs * float(scalar), self.mean_zero)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __repr__(self):
        return f"SpectralField(N={self.grid.N}, d={self.grid.d}, L={self.grid.L:g}, mean_zero={self.mean_zero})"


Symbol = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, float]


def apply_multiplier(u: SpectralField, m: Symbol) -> SpectralField:
    """Multiply ``u`` modewise by the symbol ``m(xi)``.

    ``m`` is a callable of the wavevector array (shape ``(d, *grid.shape)``),
    a precomputed array, or a scalar.  A symbol that is not finite at the
    origin is only allowed on mean-zero input; the zero mode of the result
    is then 0.  The output is projected onto real fields.
    """
    grid = u.grid
    if callable(m):
        with np.errstate(divide="ignore", invalid="ignore"):
            sym = np.asarray(m(grid.wavevectors), dtype=complex)
    else:
        sym = np.asarray(m, dtype=complex)
    sym = np.broadcast_to(sym, grid.shape).copy()
    zero = (0,) * grid.d
    nonzero = np.ones(grid.shape, bool)
    nonzero[zero] = False
    if not np.all(np.isfinite(sym[nonzero])):
        raise ValueError("multiplier is not finite on every nonzero wavevector")
    mean_zero = u.mean_zero
    if not np.isfinite(sym[zero]):
        if not u.mean_zero:
            raise SingularZeroMode("symbol is singular at xi = 0 but the field is not mean-zero")
        sym[zero] = 0.0
    out = hermitian_part(u.coeffs * sym, grid.d)
    return SpectralField(grid, out, mean_zero)


def abs_symbol(k: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(k**2, axis=0))


def abs_derivative(u: SpectralField) -> SpectralField:
    """``|D| u``."""
    return SpectralField(u.grid, u.coeffs * u.grid.kabs, True)


def gradient(u: SpectralField) -> list:
    """Components of the gradient (Nyquist components dropped)."""
    g = u.grid
    return [SpectralField(g, 1j * g.kodd[i] * u.coeffs, True) for i in range(g.d)]


def riesz(components: Sequence[SpectralField]) -> SpectralField:
    """``|D|^{-1} div`` of a vector field: symbol ``sum_i i xi_i / |xi|``."""
    g = components[0].grid
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(g.kabs > 0, 1.0 / g.kabs, 0.0)
    acc = np.zeros(g.shape, complex)
    for i, comp in enumerate(components):
        comp._check(components[0])
        acc += 1j * g.kodd[i] * inv * comp.coeffs
    return SpectralField(g, acc, True)


def poisson_semigroup(u: SpectralField, t: float, nu: float = 1.0) -> SpectralField:
    """``exp(-nu t |D|) u``."""
    if t < 0:
        raise NegativeTime(f"t must be >= 0, got {t}")
    if not nu > 0:
        raise ValueError("nu must be positive")
    return SpectralField(u.grid, u.coeffs * np.exp(-nu * t * u.grid.kabs), u.mean_zero)


def dealiased_product(u: SpectralField, v: SpectralField) -> SpectralField:
    """Pointwise product with 2/3-rule truncation of both factors and the result."""
    if u.grid != v.grid:
        raise GridMismatch(f"{u.grid} vs {v.grid}")
    g = u.grid
    mask = g.dealias_mask
    prod = g.inverse(u.coeffs * mask) * g.inverse(v.coeffs * mask)
    return SpectralField(g, g.forward(prod) * mask, False)


# -- exponential quadrature ------------------------------------------------

_SERIES_CUTOFF = 1e-4


def exp_quadrature_weights(rate, h):
    """Weights ``(wa, wb)`` with

    ``int_0^h exp(-r (h - s)) ((1 - s/h) a + (s/h) b) ds = wa a + wb b``.

    Broadcasts over ``rate`` and ``h``.  For ``r h < 1e-4`` a Taylor series
    replaces the closed form.
    """
    rate = np.asarray(rate, dtype=float)
    h = np.asarray(h, dtype=float)
    x = rate * h
    small = x < _SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    # phi1 = (1 - e^{-x}) / x,  psi = (1 - (1 + x) e^{-x}) / x^2
    em1 = -np.expm1(-xs)
    phi1 = em1 / xs
    psi = (em1 - xs * np.exp(-xs)) / xs**2
    xt = np.where(small, x, 0.0)
    phi1_s = 1.0 - xt / 2.0 + xt**2 / 6.0 - xt**3 / 24.0 + xt**4 / 120.0
    psi_s = 0.5 - xt / 3.0 + xt**2 / 8.0 - xt**3 / 30.0 + xt**4 / 144.0
    phi1 = np.where(small, phi1_s, phi1)
    psi = np.where(small, psi_s, psi)
    wa = h * psi
    wb = h * (phi1 - psi)
    return wa, wb


def exp_quadrature_step(rate, a, b, h):
    """Exact integral of ``exp(-r (h - s))`` against the linear interpolant of a, b."""
    if np.any(np.asarray(h) <= 0):
        raise ValueError("h must be positive")
    if np.any(np.asarray(rate) < 0):
        raise ValueError("rate must be >= 0")
    wa, wb = exp_quadrature_weights(rate, h)
    return wa * a + wb * b


# -- strip -----------------------------------------------------------------


@dataclass(frozen=True)
class StripGrid:
    """Vertical nodes ``0 = z_0 > z_1 > ... > z_{M-1} = -Z`` over a torus grid.

    ``grading = 0`` gives uniform nodes; ``grading = beta > 0`` places them at
    ``-Z expm1(beta s) / expm1(beta)`` for uniform ``s`` in [0, 1], which
    refines toward the surface where high modes live.
    """

    torus: TorusGrid
    M: int = 128
    Z: float = None
    grading: float = 4.0

    def __post_init__(self):
        if self.Z is None:
            object.__setattr__(self, "Z", STRIP_DEPTH_FACTOR / self.torus.k_min)
        if self.M < 4:
            raise ValueError("M must be >= 4")
        if not self.Z > 0:
            raise ValueError("Z must be positive")
        if self.grading < 0:
            raise ValueError("grading must be >= 0")
        if math.exp(-self.Z * self.torus.k_min) > 1e-12:
            raise ValueError(f"Z = {self.Z} too shallow: exp(-Z k_min) > 1e-12")

    @cached_property
    def nodes(self) -> np.ndarray:
        s = np.linspace(0.0, 1.0, self.M)
        if self.grading == 0:
            z = -self.Z * s
        else:
            z = -self.Z * np.expm1(self.grading * s) / np.expm1(self.grading)
        z[0] = 0.0
        z[-1] = -self.Z
        return z

    @cached_property
    def widths(self) -> np.ndarray:
        """``h_m = z_m - z_{m+1}`` for the M - 1 intervals."""
        return self.nodes[:-1] - self.nodes[1:]

    def refined(self, factor: int = 2) -> "StripGrid":
        return StripGrid(self.torus, (self.M - 1) * factor + 1, self.Z, self.grading)


@dataclass(frozen=True, eq=False)
class StripField:
    """A spectral field at every z-node; ``coeffs`` has shape ``(M, *torus.shape)``."""

    strip: StripGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.strip.M,) + self.strip.torus.shape:
            raise GridMismatch(f"strip coefficient shape {c.shape} is wrong")
        object.__setattr__(self, "coeffs", c)

    def slice(self, m: int) -> SpectralField:
        return SpectralField(self.strip.torus, self.coeffs[m])

    @property
    def slices(self) -> list:
        return [self.slice(m) for m in range(self.strip.M)]

    def physical(self) -> np.ndarray:
        return inverse(self.coeffs, self.strip.torus.d)

    def sup(self) -> float:
        return float(np.max(np.abs(self.physical())))


@dataclass(frozen=True)
class PhysicalParams:
    """Viscosities and densities of the two phases (upper phase ``plus``)."""

    mu_plus: float = 1.0
    mu_minus: float = 1.0
    rho_plus: float = 0.0
    rho_minus: float = 1.0
    kappa: float = field(init=False)

    def __post_init__(self):
        if self.mu_plus < 0 or not self.mu_minus > 0:
            raise ValueError("need mu_plus >= 0 and mu_minus > 0")
        if not self.rho_minus > self.rho_plus:
            raise ValueError("only the stable case rho_minus > rho_plus is supported")
        object.__setattr__(self, "kappa", (self.rho_minus - self.rho_plus) / (self.mu_plus + self.mu_minus))

    @classmethod
    def one_phase(cls, rho_minus: float = 1.0, mu_minus: float = 1.0) -> "PhysicalParams":
        return cls(mu_plus=0.0, mu_minus=mu_minus, rho_plus=0.0, rho_minus=rho_minus)

    @property
    def jump(self) -> float:
        """Density jump ``rho_minus - rho_plus``."""
        return self.rho_minus - self.rho_plus


# -- utilities ---------------------------------------------------------------


def random_trig_polynomial(grid: TorusGrid, rng: np.random.Generator, n_modes: int = 4,
                           k_max: int = 4) -> SpectralField:
    """Mean-zero trig polynomial with ``n_modes`` random wavevectors, |k_i| <= k_max."""
    modes = []
    for _ in range(n_modes):
        if grid.d == 1:
            k = int(rng.integers(1, k_max + 1))
        else:
            k = (0, 0)
            while k == (0, 0):
                k = tuple(int(v) for v in rng.integers(-k_max, k_max + 1, size=2))
        modes.append((k, float(rng.uniform(0.2, 1.0)), float(rng.uniform(0, 2 * math.pi))))
    return SpectralField.from_modes(grid, modes)


def resample(u: SpectralField, grid: TorusGrid) -> SpectralField:
    """Same trigonometric polynomial on another grid of equal period and dimension.

    Modes not resolved on the target are dropped, as is the Nyquist mode
    of either grid.
    """
    if grid.L != u.grid.L or grid.d != u.grid.d:
        raise GridMismatch("resampling needs equal period and dimension")
    src = u.grid
    keep = min(src.N, grid.N) // 2
    out = np.zeros(grid.shape, complex)
    n_src = src.mode_index
    sel = np.all(np.abs(n_src) < keep, axis=0)
    idx = tuple(n_src[i][sel] % grid.N for i in range(src.d))
    out[idx] = u.coeffs[sel]
    return SpectralField(grid, out, u.mean_zero)


def translate(u: SpectralField, shift) -> SpectralField:
    """``u(x - shift)``."""
    a = np.atleast_1d(np.asarray(shift, dtype=float))
    phase = np.exp(-1j * np.tensordot(a, u.grid.kodd, axes=(0, 0)))
    return SpectralField(u.grid, u.coeffs * phase, u.mean_zero)


def finite_difference_weights(x0: float, xs: np.ndarray, order: int) -> np.ndarray:
    """Weights of the derivative of given order at ``x0`` from samples at ``xs`` (Fornberg)."""
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    c = np.zeros((n, order + 1))
    c1, c4 = 1.0, xs[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]
