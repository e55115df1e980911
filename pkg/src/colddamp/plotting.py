"""Optional PNG renderings of the CLI outputs (``--plot``)."""
from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    _pyplot().close(fig)


def plot_occupancies(path, occupancies, method: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    idx = np.arange(1, len(occupancies) + 1)
    ax.bar(idx, occupancies)
    ax.set_xlabel("mode")
    ax.set_ylabel("n_eff")
    ax.set_yscale("log")
    ax.set_xticks(idx)
    ax.set_title(method)
    _save(fig, path)


def plot_spectrum(path, grid) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for j in range(grid.spectra.shape[1]):
        ax.plot(grid.Omega, grid.spectra[:, j], label=f"{grid.prefix}{j + 1}")
    ax.set_xlabel("Omega")
    ax.set_ylabel("S_q")
    ax.set_yscale("log")
    ax.set_title(f"tau = {grid.tau:.6g}")
    ax.legend()
    _save(fig, path)


def plot_trajectory(path, ensemble) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for j in range(ensemble.mean.shape[1]):
        ax.plot(ensemble.times, ensemble.mean[:, j], label=f"mode {j + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("ensemble n(t)")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, path)


def plot_scan(path, result) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    if result.axis2 is None:
        ax.plot(result.axis1, result.total[0], marker=".")
        ax.set_xlabel(result.axis1_name)
        ax.set_ylabel("total occupancy")
        ax.set_yscale("log")
    else:
        data = np.log10(result.total)
        mesh = ax.pcolormesh(result.axis1, result.axis2, np.ma.masked_invalid(data),
                             shading="nearest")
        fig.colorbar(mesh, ax=ax, label="log10 total occupancy")
        ax.set_xlabel(result.axis1_name)
        ax.set_ylabel(result.axis2_name)
    _save(fig, path)
