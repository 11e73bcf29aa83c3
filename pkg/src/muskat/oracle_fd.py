"""Brute-force finite-difference reference for the lower Dirichlet-Neumann map.

The flattened potential solves ``div(A grad v) = 0`` on the periodic strip
``[0, L) x [-Z, 0]`` with ``v = f`` on top and the flat-extension value
``exp(-Z|D|) f`` at the bottom.  Depth is parametrised by ``z = -G(s)``,
``s`` in [0, 1] uniform, so the operator becomes
``d_x(G' a11 v_x - a12 v_s) + d_s(-a12 v_x + a22 / G' v_s)``.
Second-order centred differences with the symmetric cross-term stencil give
an SPD system solved by conjugate gradients.

Only d = 1 is supported.  Coefficients are evaluated from the Fourier series
of eta at the exact (half-)node positions, so nothing here reuses the
spectral strip solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import NoConvergence, NotSPD, PoorFit
from .spectral_core import SpectralField, TorusGrid

DEFAULT_DEPTH = 12.0
DEFAULT_STRETCH = 3.0


@dataclass(frozen=True)
class DepthMap:
    """``z = -G(s) = -Z expm1(beta s) / expm1(beta)``."""

    Z: float
    beta: float = DEFAULT_STRETCH

    def depth(self, s):
        s = np.asarray(s, dtype=float)
        if self.beta == 0:
            return self.Z * s
        return self.Z * np.expm1(self.beta * s) / math.expm1(self.beta)

    def slope(self, s):
        s = np.asarray(s, dtype=float)
        if self.beta == 0:
            return np.full_like(s, self.Z)
        return self.Z * self.beta * np.exp(self.beta * s) / math.expm1(self.beta)


def _series(u: SpectralField, x: np.ndarray, z: np.ndarray, order: str = "value") -> np.ndarray:
    """Evaluate ``exp(z|D|) u``, its x-derivative or ``|D|`` of it at ``(z_j, x_i)``."""
    g = u.grid
    k = g.wavevectors[0]
    c = np.array(u.coeffs)
    c[0] = 0.0
    keep = np.abs(c) > 0
    k, c = k[keep], c[keep]
    if order == "dx":
        c = 1j * k * c
    elif order == "abs":
        c = np.abs(k) * c
    lift = np.exp(np.multiply.outer(z, np.abs(k))) * c  # (nz, modes)
    return (lift @ np.exp(1j * np.multiply.outer(k, x))).real


@dataclass
class FDSolution:
    x: np.ndarray
    z: np.ndarray  # node depths, z[0] = 0 > ... > z[-1] = -Z
    v: np.ndarray  # (nz + 1, nx)
    iterations: int
    residual: float
    matrix: sp.csr_matrix
    depth_map: DepthMap


def _check(eta: SpectralField, nx: int, nz: int):
    if eta.grid.d != 1:
        raise ValueError("the finite-difference oracle supports d = 1 only")
    if nx < 32 or nz < 32:
        raise ValueError("need nx, nz >= 32")


def assemble(eta: SpectralField, nx: int, nz: int, Z: float = DEFAULT_DEPTH,
             beta: float = DEFAULT_STRETCH):
    """Sparse SPD matrix on interior nodes plus the boundary-coupling pieces.

    Returns ``(K, K_top, K_bottom, dmap)`` with ``K v_int = -(K_top f + K_bottom v_bottom)``.
    """
    _check(eta, nx, nz)
    L = eta.grid.L
    hx = L / nx
    hs = 1.0 / nz
    dmap = DepthMap(Z, beta)
    x = np.arange(nx) * hx
    s = np.arange(nz + 1) * hs
    s_half = (np.arange(nz) + 0.5) * hs

    def coeffs(xq, sq):
        zq = -dmap.depth(sq)
        Hx = _series(eta, xq, zq, "dx")
        DH = _series(eta, xq, zq, "abs")
        Gp = dmap.slope(sq)[:, None]
        a11 = 1.0 + DH
        a22 = (1.0 + Hx**2) / (1.0 + DH)
        return Gp * a11, Hx, a22 / Gp, a11, a22

    # b11 at (s_j, x_{i+1/2}); b22 at (s_{j+1/2}, x_i); b12 at nodes
    b11_half, _, _, a11_h, a22_h = coeffs(x + 0.5 * hx, s)
    _, _, b22_half, a11_v, a22_v = coeffs(x, s_half)
    _, b12, _, a11_n, a22_n = coeffs(x, s)
    for a11, a22 in ((a11_h, a22_h), (a11_v, a22_v), (a11_n, a22_n)):
        if np.min(a11) <= 0 or np.min(a22) <= 0:
            raise NotSPD("coefficient matrix is not positive definite on the strip")
    if np.min(a11_n * a22_n - b12**2) <= 0:
        raise NotSPD("coefficient matrix is not positive definite on the strip")

    # full-grid operator over all (j, i), j = 0..nz; rows restricted later
    n_all = (nz + 1) * nx

    def idx(j, i):
        return j * nx + (i % nx)

    J, I = np.meshgrid(np.arange(1, nz), np.arange(nx), indexing="ij")
    J, I = J.ravel(), I.ravel()
    rows, cols, vals = [], [], []

    def add(dj, di, val):
        rows.append(idx(J, I))
        cols.append(idx(J + dj, I + di))
        vals.append(val)

    e = b11_half[J, I] / hx**2
    w = b11_half[J, (I - 1) % nx] / hx**2
    n = b22_half[J - 1, I] / hs**2  # toward s_{j-1} (shallower)
    so = b22_half[J, I] / hs**2
    add(0, 0, e + w + n + so)
    add(0, 1, -e)
    add(0, -1, -w)
    add(-1, 0, -n)
    add(1, 0, -so)
    c = 1.0 / (4.0 * hx * hs)
    b_ip = b12[J, (I + 1) % nx]
    b_im = b12[J, (I - 1) % nx]
    b_jp = b12[J + 1, I]
    b_jm = b12[J - 1, I]
    add(1, 1, -c * (b_ip + b_jp))
    add(-1, 1, c * (b_ip + b_jm))
    add(1, -1, c * (b_im + b_jp))
    add(-1, -1, -c * (b_im + b_jm))
    full = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n_all, n_all))
    interior = np.arange(nx, nz * nx)
    top = np.arange(nx)
    bottom = np.arange(nz * nx, n_all)
    K = full[interior][:, interior].tocsr()
    return K, full[interior][:, top].tocsr(), full[interior][:, bottom].tocsr(), dmap


def fd_harmonic_extension(eta: SpectralField, f: SpectralField, nx: int = 256, nz: int = 256,
                          Z: float = DEFAULT_DEPTH, beta: float = DEFAULT_STRETCH,
                          rtol: float = 1e-11, maxiter: Optional[int] = None) -> FDSolution:
    """Solve the flattened elliptic problem for ``v`` on an ``(nz + 1) x nx`` node grid."""
    K, K_top, K_bot, dmap = assemble(eta, nx, nz, Z, beta)
    x = np.arange(nx) * (eta.grid.L / nx)
    top = _series(f, x, np.zeros(1))[0] + f.mean
    bottom = _series(f, x, np.array([-Z]))[0] + f.mean
    rhs = -(K_top @ top + K_bot @ bottom)
    count = [0]

    def tick(_):
        count[0] += 1

    maxiter = 20 * K.shape[0] if maxiter is None else maxiter
    sol, info = cg(K, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, callback=tick)
    residual = float(np.linalg.norm(K @ sol - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny))
    if info != 0 or not residual <= 1e-10:
        raise NoConvergence(f"CG stopped with info={info}, relative residual {residual:.3g}", [residual])
    v = np.vstack([top, sol.reshape(nz - 1, nx), bottom])
    z = -dmap.depth(np.linspace(0.0, 1.0, nz + 1))
    return FDSolution(x, z, v, count[0], residual, K, dmap)


def fd_dn(eta: SpectralField, f: SpectralField, nx: int = 256, nz: int = 256,
          Z: float = DEFAULT_DEPTH, beta: float = DEFAULT_STRETCH,
          grid: Optional[TorusGrid] = None, solution: Optional[FDSolution] = None) -> SpectralField:
    """``a22 d_z v + a21 d_x v`` at the surface from the FD potential.

    The result lives on ``grid`` (default: an ``nx``-point torus grid); it is
    made mean-zero.
    """
    sol = fd_harmonic_extension(eta, f, nx, nz, Z, beta) if solution is None else solution
    hx = eta.grid.L / nx
    hs = 1.0 / nz
    v = sol.v
    dv_ds = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * hs)
    dv_dz = -dv_ds / sol.depth_map.slope(0.0)
    dv_dx = (np.roll(v[0], -1) - np.roll(v[0], 1)) / (2.0 * hx)
    zero = np.zeros(1)
    eta_x = _series(eta, sol.x, zero, "dx")[0]
    d_eta = _series(eta, sol.x, zero, "abs")[0]
    dn = (1.0 + eta_x**2) / (1.0 + d_eta) * dv_dz - eta_x * dv_dx
    out_grid = TorusGrid(nx, eta.grid.L) if grid is None else grid
    vals = np.fft.fft(dn) / nx
    res = np.zeros(out_grid.shape, complex)
    keep = min(nx, out_grid.N) // 2
    m = np.fft.fftfreq(nx, 1.0 / nx).round().astype(int)
    sel = np.abs(m) < keep
    res[m[sel] % out_grid.N] = vals[sel]
    return SpectralField(out_grid, res, True)


# -- epsilon-scaling probes ----------------------------------------------------


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r2: float
    eps: tuple
    values: tuple

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "eps": list(self.eps), "values": list(self.values)}


def loglog_fit(eps: Sequence[float], values: Sequence[float], min_r2: float = 0.99) -> ScalingFit:
    """Least-squares line through ``(log eps, log value)``."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if not np.all(np.isfinite(y)):
        raise PoorFit("non-positive value in the sweep", float("nan"), float("nan"))
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if r2 < min_r2:
        raise PoorFit(f"log-log fit r2 = {r2:.4f} < {min_r2}", float(slope), r2)
    return ScalingFit(float(slope), float(intercept), r2, tuple(map(float, eps)), tuple(map(float, values)))


PROBES: dict = {}


def probe(name: str):
    def register(fn: Callable):
        PROBES[name] = fn
        return fn
    return register


def _besov1(u: SpectralField) -> float:
    from .besov import besov_norm, partition_for
    return besov_norm(u, 1.0, partition_for(u.grid))


@probe("R_minus_linearity")
def _r_minus(eps, eta, f, **kw):
    from .dn_solver import dn_remainder
    return _besov1(dn_remainder(eta * eps, f, **kw))


@probe("G_minus_deviation")
def _g_minus(eps, eta, f, **kw):
    from .dn_solver import dn_apply
    from .spectral_core import abs_derivative
    return _besov1(dn_apply(eta * eps, f, **kw) - abs_derivative(f))


@probe("mild_deviation")
def _mild(eps, eta, f, T=1.0, K=16, params=None, config=None, **kw):
    from .evolution import linear_flow, solve_global_picard
    from .spectral_core import PhysicalParams
    params = PhysicalParams.one_phase() if params is None else params
    eta0 = eta * eps
    kwargs = {} if config is None else {"config": config}
    path = solve_global_picard(eta0, T, K, params=params, **kwargs)
    return _besov1(path.etas[-1] - linear_flow(eta0, params.kappa, T))


@probe("f_minus_correction")
def _f_minus(eps, eta, f, params=None, **kw):
    from .spectral_core import PhysicalParams
    from .two_phase import solve_f_minus
    params = PhysicalParams(mu_plus=1.0, mu_minus=1.0, rho_plus=0.0, rho_minus=1.0) if params is None else params
    e = eta * eps
    return _besov1(solve_f_minus(e, params, **kw) - e * (params.kappa * params.mu_minus))


def epsilon_scaling_probe(quantity: str, eps_list: Sequence[float], base_eta: SpectralField,
                          base_f: Optional[SpectralField] = None, min_r2: float = 0.99,
                          **kwargs) -> ScalingFit:
    """Fit ``log quantity(eps)`` against ``log eps`` for a registered probe.

    Registered names: ``R_minus_linearity``, ``G_minus_deviation``,
    ``mild_deviation``, ``f_minus_correction``.
    """
    if quantity not in PROBES:
        raise KeyError(f"unknown probe {quantity!r}; choose from {sorted(PROBES)}")
    eps = np.asarray(sorted(eps_list), dtype=float)
    if eps.size < 4 or not eps[0] > 0:
        raise ValueError("need at least four positive eps values")
    values = [PROBES[quantity](float(e), base_eta, base_f, **kwargs) for e in eps]
    return loglog_fit(eps, values, min_r2)
