"""Dirichlet-Neumann operators through the flattened-strip fixed point.

The lower fluid domain is mapped onto the strip ``z < 0`` by
``rho(x, z) = z + H(x, z)`` with ``H = exp(z|D|) eta``.  The flattened
potential ``v`` is the fixed point of

    T[v] = exp(z|D|) f + int_0^z exp((z - z')|D|) (w + Q_a[v]) dz'

where ``w`` solves ``(d_z + |D|) w = |D| (Q_b[v] - Q_a[v])`` from the bottom
of the strip upward.  Then ``G^-(eta) f = |D| f + w(z = 0)``.

Every z-integral is done mode by mode with the exponential kernel integrated
exactly against the piecewise-linear interpolant of the forcing.  The solver
iterates the pair ``(v, d_z v)`` and refreshes ``d_z v`` through the identity
``d_z T[v] = |D| T[v] + w + Q_a[v]``, which avoids differencing in z.

All array routines take coefficient stacks with a leading batch axis, so one
call handles every time node of a path at once.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .besov import besov_norm_coeffs, partition_for
from .config import DEFAULT, SolverConfig
from .errors import DenominatorTooSmall, NoConvergence, SmallnessViolated
from .spectral_core import (
    SpectralField,
    StripField,
    StripGrid,
    TorusGrid,
    exp_quadrature_weights,
    finite_difference_weights,
    forward,
    inverse,
)

log = logging.getLogger(__name__)

SMALLNESS_SLACK = 1e-12


# -- geometry of the flattening --------------------------------------------


class StripKernels:
    """Per-interval exponential factors and quadrature weights for a strip."""

    def __init__(self, strip: StripGrid):
        self.strip = strip
        g = strip.torus
        k = g.kabs
        h = strip.widths.reshape((-1,) + (1,) * g.d)
        self.decay = np.exp(-k * h)  # (M-1, *shape)
        self.wa, self.wb = exp_quadrature_weights(k, h)
        z = strip.nodes.reshape((-1,) + (1,) * g.d)
        self.lift = np.exp(z * k)  # exp(z |k|), (M, *shape)


_KERNELS: dict = {}


def kernels_for(strip: StripGrid) -> StripKernels:
    ker = _KERNELS.get(strip)
    if ker is None:
        if len(_KERNELS) > 16:
            _KERNELS.clear()
        ker = _KERNELS[strip] = StripKernels(strip)
    return ker


class Geometry:
    """Physical-space coefficients of the flattened problem for a batch of eta.

    ``eta_hat`` has shape ``(B, *shape)``.  Quantities are dealiased with the
    2/3 rule before entering products.
    """

    def __init__(self, strip: StripGrid, eta_hat: np.ndarray, guard: Optional[float] = 0.4):
        g = strip.torus
        self.strip = strip
        self.d = g.d
        self.kernels = kernels_for(strip)
        mask = g.dealias_mask
        eta = np.asarray(eta_hat, dtype=complex) * mask
        eta[(slice(None),) + (0,) * g.d] = 0.0
        self.eta_hat = eta
        H = eta[:, None] * self.kernels.lift[None]  # (B, M, *shape)
        self.H_hat = H
        self.grad_H = np.stack([inverse(1j * g.kodd[i] * H, g.d) for i in range(g.d)])
        self.DH = inverse(g.kabs * H, g.d)
        denom = 1.0 + self.DH
        self.min_denominator = float(np.min(denom)) if denom.size else 1.0
        if guard is not None and self.min_denominator < guard:
            raise DenominatorTooSmall(
                f"min(1 + |D|H) = {self.min_denominator:.3g} below guard {guard}")
        self.coef = (np.sum(self.grad_H**2, axis=0) - self.DH) / denom


def lifted(strip: StripGrid, f_hat: np.ndarray) -> np.ndarray:
    """``exp(z|D|) f`` for a batch ``(B, *shape)`` -> ``(B, M, *shape)``."""
    return np.asarray(f_hat)[:, None] * kernels_for(strip).lift[None]


def q_forms_arrays(geom: Geometry, v_hat: np.ndarray, vz_hat: np.ndarray):
    """Spectral ``(Q_a, Q_b)`` from spectral ``v`` and ``d_z v`` (all ``(B, M, *shape)``)."""
    g = geom.strip.torus
    d = g.d
    mask = g.dealias_mask
    vm = v_hat * mask
    vx = np.stack([inverse(1j * g.kodd[i] * vm, d) for i in range(d)])
    vz = inverse(vz_hat * mask, d)
    qa = np.sum(geom.grad_H * vx, axis=0) - geom.coef * vz
    qa_hat = forward(qa, d) * mask
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_k = np.where(g.kabs > 0, 1.0 / g.kabs, 0.0)
    qb_hat = np.zeros_like(qa_hat)
    for i in range(d):
        comp = geom.grad_H[i] * vz - geom.DH * vx[i]
        qb_hat += 1j * g.kodd[i] * inv_k * forward(comp, d)
    qb_hat *= mask
    return qa_hat, qb_hat


def upward_w(kernels: StripKernels, forcing: np.ndarray) -> np.ndarray:
    """Solve ``(d_z + |D|) w = forcing`` from ``w(-Z) = 0`` up to ``z = 0``."""
    w = np.zeros_like(forcing)
    M = forcing.shape[1]
    for m in range(M - 2, -1, -1):
        w[:, m] = kernels.decay[m] * w[:, m + 1] + kernels.wa[m] * forcing[:, m + 1] + kernels.wb[m] * forcing[:, m]
    return w


def downward_integral(kernels: StripKernels, g: np.ndarray) -> np.ndarray:
    """``u(z) = int_z^0 exp(-(z' - z)|D|) g(z') dz'`` on the nodes."""
    u = np.zeros_like(g)
    M = g.shape[1]
    for m in range(M - 1):
        u[:, m + 1] = kernels.decay[m] * u[:, m] + kernels.wa[m] * g[:, m] + kernels.wb[m] * g[:, m + 1]
    return u


def remainder_direct(kernels: StripKernels, forcing: np.ndarray) -> np.ndarray:
    """``int_{-Z}^0 exp(tau|D|) forcing dtau`` summed interval by interval."""
    per = kernels.wa[None] * forcing[:, 1:] + kernels.wb[None] * forcing[:, :-1]
    return np.sum(kernels.lift[None, :-1] * per, axis=1)


@dataclass
class TStep:
    v_hat: np.ndarray
    vz_hat: np.ndarray
    w_hat: np.ndarray
    qa_hat: np.ndarray
    qb_hat: np.ndarray
    forcing: np.ndarray


def apply_T_arrays(geom: Geometry, f_hat: np.ndarray, v_hat: np.ndarray, vz_hat: np.ndarray) -> TStep:
    g = geom.strip.torus
    ker = geom.kernels
    qa, qb = q_forms_arrays(geom, v_hat, vz_hat)
    forcing = g.kabs * (qb - qa)
    w = upward_w(ker, forcing)
    src = w + qa
    v_new = lifted(geom.strip, f_hat) - downward_integral(ker, src)
    vz_new = g.kabs * v_new + src
    return TStep(v_new, vz_new, w, qa, qb, forcing)


# -- batched fixed point ---------------------------------------------------


@dataclass
class BatchSolution:
    v_hat: np.ndarray
    vz_hat: np.ndarray
    w_hat: np.ndarray
    qa_hat: np.ndarray
    qb_hat: np.ndarray
    remainder: np.ndarray  # R^-(eta) f, (B, *shape)
    remainder_direct: np.ndarray
    iterations: int
    residuals: np.ndarray  # (iterations, B)
    ratios: np.ndarray  # max observed contraction ratio per member
    converged: np.ndarray


def smallness(eta_hat: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``|| |D| eta ||_{B^0_{inf,1}}`` for each member of a batch."""
    return besov_norm_coeffs(grid.kabs * np.asarray(eta_hat), 0.0, partition_for(grid))


def check_smallness(eta_hat: np.ndarray, grid: TorusGrid, c_star: float) -> np.ndarray:
    norms = np.atleast_1d(smallness(eta_hat, grid))
    bad = np.nonzero(norms > c_star * (1.0 + SMALLNESS_SLACK))[0]
    if bad.size:
        i = int(bad[0])
        raise SmallnessViolated(
            f"|| |D| eta ||_B0 = {norms[i]:.4g} exceeds c_star = {c_star:g} (member {i})",
            value=float(norms[i]), threshold=c_star, index=i)
    return norms


def _sup(coeffs: np.ndarray, d: int) -> np.ndarray:
    """Sup over all but the leading axis of the physical samples."""
    vals = np.abs(inverse(coeffs, d))
    return vals.reshape(vals.shape[0], -1).max(axis=1)


def solve_batch(strip: StripGrid, eta_hat: np.ndarray, f_hat: np.ndarray,
                config: SolverConfig = DEFAULT, init=None, check=True) -> BatchSolution:
    """Picard iteration of T for every ``(eta_b, f_b)`` pair of the batch.

    ``init`` optionally provides a starting ``(v_hat, vz_hat)``.
    """
    g = strip.torus
    eta_hat = np.asarray(eta_hat, dtype=complex)
    f_hat = np.asarray(f_hat, dtype=complex)
    if check:
        check_smallness(eta_hat, g, config.c_star)
    geom = Geometry(strip, eta_hat, config.denominator_guard)
    if init is None:
        v = lifted(strip, f_hat)
        vz = g.kabs * v
    else:
        v, vz = init
    scale = np.maximum(_sup(f_hat, g.d), np.finfo(float).tiny)
    floor = 1e3 * np.finfo(float).eps
    residuals = []
    ratios = np.zeros(f_hat.shape[0])
    step = None
    it = 0
    converged = np.zeros(f_hat.shape[0], bool)
    for it in range(1, config.dn_max_iter + 1):
        step = apply_T_arrays(geom, f_hat, v, vz)
        res = _sup(step.v_hat - v, g.d) / scale
        if not np.all(np.isfinite(res)):
            raise NoConvergence("non-finite iterate in the potential solve", residuals)
        if residuals:
            prev = residuals[-1]
            live = prev > floor
            ratios[live] = np.maximum(ratios[live], res[live] / prev[live])
        residuals.append(res)
        v, vz = step.v_hat, step.vz_hat
        converged = res <= config.dn_tol
        if np.all(converged):
            break
    residuals = np.array(residuals)
    if not np.all(converged):
        if np.any(residuals[-1] > residuals[0]):
            raise NoConvergence(
                f"potential iteration diverged after {it} steps (residual {residuals[-1].max():.3g})",
                residuals[:, 0])
        log.warning("potential solve stopped at max_iter=%d with residual %.3g", it, residuals[-1].max())
    else:
        log.debug("potential solve: %d iterations, max ratio %.3g", it, ratios.max())
    rem = step.w_hat[:, 0].copy()
    direct = remainder_direct(geom.kernels, step.forcing)
    return BatchSolution(v, vz, step.w_hat, step.qa_hat, step.qb_hat, rem, direct, it,
                         residuals, ratios, converged)


def remainder_batch(strip: StripGrid, eta_hat: np.ndarray, f_hat: np.ndarray,
                    config: SolverConfig = DEFAULT, check: bool = True,
                    cache: Optional[dict] = None, tag=None) -> np.ndarray:
    """``R^-(eta_b) f_b`` for a batch.

    With ``config.z_richardson`` the O(h^2) z-error is cancelled by combining
    the strip with its twofold refinement.  ``cache`` (a dict owned by the
    caller) keeps the converged potentials under ``tag`` and seeds the next
    call with the same tag and batch shape.
    """

    def run(s: StripGrid, chk: bool) -> np.ndarray:
        key = (s, tag)
        init = None
        if cache is not None and key in cache and cache[key][0].shape[0] == len(f_hat):
            init = cache[key]
        sol = solve_batch(s, eta_hat, f_hat, config, init=init, check=chk)
        if cache is not None:
            cache[key] = (sol.v_hat, sol.vz_hat)
        return sol.remainder

    coarse = run(strip, check)
    if not config.z_richardson:
        return coarse
    fine = run(strip.refined(2), False)
    return (4.0 * fine - coarse) / 3.0


# -- public single-field API -------------------------------------------------


def default_strip(grid: TorusGrid, config: SolverConfig = DEFAULT) -> StripGrid:
    return StripGrid(grid, M=config.M, grading=config.grading)


def lift_eta(eta: SpectralField, strip: StripGrid) -> StripField:
    """``H(x, z) = exp(z|D|) eta`` on the strip nodes (mean of eta dropped)."""
    c = np.array(eta.coeffs)
    c[(0,) * eta.grid.d] = 0.0
    return StripField(strip, lifted(strip, c[None])[0])


@dataclass(frozen=True)
class DiffeoReport:
    ok: bool
    min_dz_rho: float


def diffeo_check(eta: SpectralField, strip: StripGrid) -> DiffeoReport:
    """Minimum of ``d_z rho = 1 + exp(z|D|)|D| eta`` over the strip nodes."""
    H = lift_eta(eta, strip)
    dz_rho = 1.0 + inverse(strip.torus.kabs * H.coeffs, strip.torus.d)
    m = float(np.min(dz_rho))
    return DiffeoReport(m >= 0.5, m)


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """``A(x, z)`` of the flattened divergence-form equation.

    ``entries`` has shape ``(d + 1, d + 1, M, *shape)``.
    """

    entries: np.ndarray

    def det(self) -> np.ndarray:
        return np.linalg.det(np.moveaxis(self.entries, (0, 1), (-2, -1)))

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.entries - np.swapaxes(self.entries, 0, 1))))

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(np.moveaxis(self.entries, (0, 1), (-2, -1)))))


def coefficient_matrix(eta: SpectralField, strip: StripGrid) -> CoefficientMatrix:
    g = strip.torus
    H = lift_eta(eta, strip).coeffs
    grad = np.stack([inverse(1j * g.kodd[i] * H, g.d) for i in range(g.d)])
    DH = inverse(g.kabs * H, g.d)
    n = g.d + 1
    A = np.zeros((n, n) + DH.shape)
    for i in range(g.d):
        A[i, i] = 1.0 + DH
        A[i, g.d] = A[g.d, i] = -grad[i]
    A[g.d, g.d] = (1.0 + np.sum(grad**2, axis=0)) / (1.0 + DH)
    return CoefficientMatrix(A)


def dz_fourth_order(v: StripField) -> StripField:
    """``d_z v`` by five-point finite differences on the (possibly graded) nodes."""
    z = v.strip.nodes
    M = z.size
    out = np.zeros_like(v.coeffs)
    for m in range(M):
        lo = min(max(m - 2, 0), M - 5)
        idx = np.arange(lo, lo + 5)
        wts = finite_difference_weights(z[m], z[idx], 1)
        out[m] = np.tensordot(wts, v.coeffs[idx], axes=(0, 0))
    return StripField(v.strip, out)


def q_forms(v: StripField, H: StripField, dz_v: Optional[StripField] = None,
            guard: float = DEFAULT.denominator_guard):
    """``(Q_a[v], Q_b[v])`` for the lift ``H``.

    ``d_z v`` defaults to fourth-order differences in z.
    """
    strip = v.strip
    if dz_v is None:
        dz_v = dz_fourth_order(v)
    eta = H.coeffs[0]
    geom = Geometry(strip, eta[None], guard)
    qa, qb = q_forms_arrays(geom, v.coeffs[None], dz_v.coeffs[None])
    return StripField(strip, qa[0]), StripField(strip, qb[0])


@dataclass
class FlattenedPotential:
    v: StripField
    w: StripField
    H: StripField
    dz_v: StripField
    q_a: StripField
    q_b: StripField
    converged: bool
    iterations: int
    residual: float
    residuals: list = field(default_factory=list)
    contraction_ratio: float = 0.0
    remainder: Optional[SpectralField] = None
    remainder_check: float = 0.0  # |w(0) - direct integral|, relative


def _as_batch(u: SpectralField) -> np.ndarray:
    return np.asarray(u.coeffs)[None]


def apply_T(v, eta: SpectralField, f: SpectralField, strip: Optional[StripGrid] = None,
            dz_v: Optional[StripField] = None, guard: float = DEFAULT.denominator_guard) -> StripField:
    """One application of the fixed-point map.

    ``v`` is a :class:`StripField` or a :class:`FlattenedPotential`; in the
    latter case its stored ``d_z v`` is used.
    """
    if isinstance(v, FlattenedPotential):
        dz_v = v.dz_v if dz_v is None else dz_v
        v = v.v
    strip = v.strip if strip is None else strip
    if dz_v is None:
        dz_v = dz_fourth_order(v)
    geom = Geometry(strip, _as_batch(eta), guard)
    step = apply_T_arrays(geom, _as_batch(f), v.coeffs[None], dz_v.coeffs[None])
    return StripField(strip, step.v_hat[0])


def solve_potential(eta: SpectralField, f: SpectralField, tol: Optional[float] = None,
                    max_iter: Optional[int] = None, config: SolverConfig = DEFAULT,
                    strip: Optional[StripGrid] = None) -> FlattenedPotential:
    """Fixed point of T started from ``exp(z|D|) f``."""
    cfg = config
    if tol is not None or max_iter is not None:
        cfg = config.with_(dn_tol=tol if tol is not None else config.dn_tol,
                           dn_max_iter=max_iter if max_iter is not None else config.dn_max_iter)
    strip = default_strip(eta.grid, cfg) if strip is None else strip
    sol = solve_batch(strip, _as_batch(eta), _as_batch(f), cfg)
    rem = sol.remainder[0]
    scale = max(float(np.max(np.abs(rem))), np.finfo(float).tiny)
    return FlattenedPotential(
        v=StripField(strip, sol.v_hat[0]),
        w=StripField(strip, sol.w_hat[0]),
        H=lift_eta(eta, strip),
        dz_v=StripField(strip, sol.vz_hat[0]),
        q_a=StripField(strip, sol.qa_hat[0]),
        q_b=StripField(strip, sol.qb_hat[0]),
        converged=bool(sol.converged[0]),
        iterations=sol.iterations,
        residual=float(sol.residuals[-1, 0]),
        residuals=[float(r) for r in sol.residuals[:, 0]],
        contraction_ratio=float(sol.ratios[0]),
        remainder=SpectralField(eta.grid, rem, True),
        remainder_check=float(np.max(np.abs(rem - sol.remainder_direct[0]))) / scale,
    )


def dn_remainder(eta: SpectralField, f: SpectralField, config: SolverConfig = DEFAULT,
                 strip: Optional[StripGrid] = None) -> SpectralField:
    """``R^-(eta) f = G^-(eta) f - |D| f``."""
    strip = default_strip(eta.grid, config) if strip is None else strip
    pot = solve_potential(eta, f, config=config, strip=strip)
    if pot.remainder_check > 1e-10:
        raise RuntimeError(f"w(0) and the direct remainder integral differ by {pot.remainder_check:.3g}")
    rem = pot.remainder.coeffs
    if config.z_richardson:
        fine = solve_batch(strip.refined(2), _as_batch(eta), _as_batch(f), config, check=False)
        rem = (4.0 * fine.remainder[0] - rem) / 3.0
    return SpectralField(eta.grid, rem, True)


def dn_apply(eta: SpectralField, f: SpectralField, side: str = "minus",
             config: SolverConfig = DEFAULT, strip: Optional[StripGrid] = None) -> SpectralField:
    """``G^-(eta) f`` (side="minus") or ``G^+(eta) f = -G^-(-eta) f`` (side="plus")."""
    g = eta.grid
    if side == "minus":
        rem = dn_remainder(eta, f, config, strip)
        return SpectralField(g, g.kabs * f.coeffs + rem.coeffs, True)
    if side == "plus":
        rem = dn_remainder(-eta, f, config, strip)
        return SpectralField(g, -(g.kabs * f.coeffs + rem.coeffs), True)
    raise ValueError(f"side must be 'minus' or 'plus', got {side!r}")


def dn_direct(pot: FlattenedPotential) -> SpectralField:
    """``(d_z v - Q_a)|_{z=0}`` with ``d_z v`` from one-sided differences of the converged v.

    Agrees with ``|D| f + w(0)`` up to the z-discretisation error.
    """
    dz = dz_fourth_order(pot.v)
    return SpectralField(pot.v.strip.torus, dz.coeffs[0] - pot.q_a.coeffs[0], True)


def dump_strip_csv(pot: FlattenedPotential, path) -> None:
    """Physical ``H, v, w, Q_a, Q_b`` at every strip node."""
    strip = pot.v.strip
    g = strip.torus
    cols = {name: getattr(pot, name).physical() for name in ("H", "v", "w", "q_a", "q_b")}
    pts = g.points.reshape(g.d, -1)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["z"] + [f"x{i}" for i in range(g.d)] + list(cols))
        for m, z in enumerate(strip.nodes):
            flat = [c[m].reshape(-1) for c in cols.values()]
            for p in range(pts.shape[1]):
                wr.writerow([f"{z:.16e}"] + [f"{pts[i, p]:.16e}" for i in range(g.d)]
                            + [f"{c[p]:.16e}" for c in flat])
