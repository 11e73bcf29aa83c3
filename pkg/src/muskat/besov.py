"""Littlewood-Paley blocks and homogeneous Besov / Chemin-Lerner norms.

The bump is ``chi = 1`` on ``|xi| <= 3/4``, ``chi = 0`` on ``|xi| >= 4/3``
with a smooth exp(-1/x) ramp in between, and ``phi(xi) = chi(xi/2) - chi(xi)``.
Only the partition properties are relied on elsewhere.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BlockOutOfRange, DegeneratePath
from .spectral_core import SpectralField, TorusGrid, inverse

INNER = 0.75
OUTER = 4.0 / 3.0


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """0 for t <= 0, 1 for t >= 1, C-infinity in between."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def bump(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 1.0 - _smooth_step((r - INNER) / (OUTER - INNER))


def phi(r: np.ndarray) -> np.ndarray:
    """Annulus function, supported in ``3/4 < |xi| < 8/3``."""
    r = np.asarray(r, dtype=float)
    return bump(r / 2.0) - bump(r)


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    grid: TorusGrid
    j_min: int
    j_max: int
    phi_weights: np.ndarray  # (n_blocks, *grid.shape)

    @property
    def js(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1)

    def weight(self, j: int) -> np.ndarray:
        if not self.j_min <= j <= self.j_max:
            raise BlockOutOfRange(f"block {j} outside [{self.j_min}, {self.j_max}]")
        return self.phi_weights[j - self.j_min]


def make_partition(grid: TorusGrid) -> DyadicPartition:
    j_min = math.floor(math.log2(grid.k_min)) - 2
    j_max = math.ceil(math.log2(grid.k_max)) + 1
    js = np.arange(j_min, j_max + 1)
    scale = 2.0 ** (-js.astype(float))
    weights = phi(scale.reshape((-1,) + (1,) * grid.d) * grid.kabs[None])
    return DyadicPartition(grid, j_min, j_max, weights)


@functools.lru_cache(maxsize=32)
def partition_for(grid: TorusGrid) -> DyadicPartition:
    """Cached :func:`make_partition`."""
    return make_partition(grid)


def dyadic_block(u: SpectralField, j: int, p: DyadicPartition) -> SpectralField:
    return SpectralField(u.grid, u.coeffs * p.weight(j), True)


def _lp(values: np.ndarray, p: float, grid: TorusGrid) -> np.ndarray:
    axes = tuple(range(-grid.d, 0))
    if math.isinf(p):
        return np.max(np.abs(values), axis=axes)
    cell = (grid.L / grid.N) ** grid.d
    return (np.sum(np.abs(values) ** p, axis=axes) * cell) ** (1.0 / p)


def block_norms(coeffs: np.ndarray, partition: DyadicPartition, p: float = math.inf) -> np.ndarray:
    """``||Delta_j u||_{L^p}`` for every block; shape ``(..., n_blocks)``.

    ``coeffs`` may carry leading batch axes.
    """
    g = partition.grid
    c = np.asarray(coeffs)
    lead = c.shape[: c.ndim - g.d]
    blocks = c.reshape(lead + (1,) + g.shape) * partition.phi_weights
    return _lp(inverse(blocks, g.d), p, g)


def _weighted_sum(per_block: np.ndarray, s: float, partition: DyadicPartition, r: float) -> np.ndarray:
    w = 2.0 ** (s * partition.js.astype(float)) * per_block
    if math.isinf(r):
        return np.max(w, axis=-1)
    return np.sum(w**r, axis=-1) ** (1.0 / r)


def besov_norm(u: SpectralField, s: float, p: DyadicPartition, lp: float = math.inf,
               r: float = 1.0) -> float:
    """Homogeneous Besov norm; defaults to ``B^s_{inf,1}``."""
    return float(_weighted_sum(block_norms(u.coeffs, p, lp), s, p, r))


def besov_norm_coeffs(coeffs: np.ndarray, s: float, p: DyadicPartition) -> np.ndarray:
    """``B^s_{inf,1}`` norm of each member of a batch of coefficient arrays."""
    return _weighted_sum(block_norms(coeffs, p), s, p, 1.0)


def wiener_norm(u: SpectralField) -> float:
    """``sum_k |k| |u_k|``."""
    return float(np.sum(u.grid.kabs * np.abs(u.coeffs)))


def scale_to_norm(u: SpectralField, target: float, s: float, p: DyadicPartition) -> SpectralField:
    return u * (target / besov_norm(u, s, p))


def _time_lq(times: np.ndarray, values: np.ndarray, q: float) -> np.ndarray:
    """L^q in time along axis 0 (max for q = inf, trapezoid for q = 1)."""
    if math.isinf(q):
        return np.max(values, axis=0)
    if q == 1:
        return np.trapezoid(values, times, axis=0)
    raise ValueError("q must be 1 or inf")


def _check_times(times: np.ndarray, q: float):
    if times.ndim != 1 or times.size == 0:
        raise DegeneratePath("need at least one sample")
    if np.any(np.diff(times) <= 0):
        raise DegeneratePath("sample times must be strictly increasing")
    if q == 1 and times.size < 2:
        raise DegeneratePath("L^1 in time needs at least two samples")


def chemin_lerner_coeffs(times, coeffs: np.ndarray, q: float, s: float, p: DyadicPartition) -> float:
    """Chemin-Lerner norm of a path given as stacked coefficients ``(K, *shape)``."""
    times = np.asarray(times, dtype=float)
    _check_times(times, q)
    per_block = block_norms(coeffs, p)
    return float(_weighted_sum(_time_lq(times, per_block, q), s, p, 1.0))


def chemin_lerner_norm(path: Sequence, q: float, s: float, p: DyadicPartition) -> float:
    """``|| 2^{sj} ||Delta_j u||_{L^q(I; L^inf)} ||_{l^1}`` for ``[(t_i, field), ...]``."""
    if len(path) == 0:
        raise DegeneratePath("empty path")
    times = np.array([t for t, _ in path], dtype=float)
    coeffs = np.stack([u.coeffs for _, u in path])
    return chemin_lerner_coeffs(times, coeffs, q, s, p)


def x1_kappa_norm(times, coeffs: np.ndarray, p: DyadicPartition, kappa: float) -> float:
    """``L~inf B^1 + kappa L~1 B^2`` over the sampled interval."""
    times = np.asarray(times, dtype=float)
    _check_times(times, 1)
    per_block = block_norms(coeffs, p)
    js = p.js.astype(float)
    lin = np.sum(2.0**js * np.max(per_block, axis=0))
    l1 = np.sum(4.0**js * np.trapezoid(per_block, times, axis=0))
    return float(lin + kappa * l1)


@dataclass(frozen=True, eq=False)
class NormReport:
    times: np.ndarray
    besov_1: np.ndarray
    besov_2: np.ndarray
    cl_infty_1: np.ndarray
    cl_1_2: np.ndarray
    x1_kappa: np.ndarray

    COLUMNS = ("t", "besov1", "besov2", "cl_inf_b1", "cl_1_b2", "x1kappa")

    @classmethod
    def from_path(cls, times, coeffs: np.ndarray, p: DyadicPartition, kappa: float) -> "NormReport":
        """Running norms of the path on ``[0, t_i]`` at every sample."""
        times = np.asarray(times, dtype=float)
        _check_times(times, math.inf)
        per_block = block_norms(coeffs, p)
        js = p.js.astype(float)
        b1 = per_block @ 2.0**js
        b2 = per_block @ 4.0**js
        cl_inf = np.maximum.accumulate(per_block, axis=0) @ 2.0**js
        dt = np.diff(times)[:, None]
        trap = np.concatenate([np.zeros((1, per_block.shape[1])),
                               np.cumsum(0.5 * dt * (per_block[1:] + per_block[:-1]), axis=0)])
        cl_1 = trap @ 4.0**js
        return cls(times, b1, b2, cl_inf, cl_1, cl_inf + kappa * cl_1)

    def rows(self):
        return zip(self.times, self.besov_1, self.besov_2, self.cl_infty_1, self.cl_1_2, self.x1_kappa)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.COLUMNS)
            for row in self.rows():
                writer.writerow([f"{v:.16e}" for v in row])

    @classmethod
    def read_csv(cls, path) -> "NormReport":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(*(data[:, i] for i in range(6)))
