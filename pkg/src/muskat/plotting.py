"""Figures written next to the CSV/JSON reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .besov import NormReport  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def plot_norms(report: NormReport, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(report.times, report.besov_1, label="B^1 norm")
    ax.semilogy(report.times, report.besov_2, label="B^2 norm")
    ax.semilogy(report.times, report.x1_kappa, "--", label="running X^1_kappa")
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_interface(x: np.ndarray, profiles: np.ndarray, times: np.ndarray, path, n_curves: int = 5) -> None:
    """A few interface profiles along the path (d = 1)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for i in np.unique(np.linspace(0, len(times) - 1, n_curves).round().astype(int)):
        ax.plot(x, profiles[i], label=f"t = {times[i]:.3g}")
    ax.set_xlabel("x")
    ax.set_ylabel("interface height")
    ax.legend()
    _save(fig, path)


def plot_dn_comparison(x: np.ndarray, spectral: np.ndarray, oracle: np.ndarray, path) -> None:
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    top.plot(x, spectral, label="spectral")
    top.plot(x, oracle, "--", label="finite differences")
    top.legend()
    bottom.plot(x, spectral - oracle)
    bottom.set_ylabel("difference")
    bottom.set_xlabel("x")
    _save(fig, path)


def plot_besov_blocks(js: np.ndarray, blocks: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    keep = blocks > 0
    ax.semilogy(js[keep], blocks[keep], "o-")
    ax.set_xlabel("dyadic block j")
    ax.set_ylabel("sup norm of block")
    _save(fig, path)
