"""Figures written next to the CSV outputs. Uses the Agg backend only."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_load_history(history, path, target: float | None = None):
    """Bolt loads and load ratios against applied displacement."""
    u, P, F = history.u, history.P, history.forces
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for i in range(history.n_bolts):
        ax1.plot(u, F[:, i] / 1e3, label=f"bolt {i + 1}")
    ax1.plot(u, P / 1e3, "k--", lw=1, label="total")
    if target is not None:
        ax1.axhline(target / 1e3, color="grey", lw=0.8, ls=":")
    ax1.set_xlabel("displacement [mm]")
    ax1.set_ylabel("load [kN]")
    ax1.legend()
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.where(P[:, None] > 0, F / P[:, None], np.nan)
    for i in range(history.n_bolts):
        ax2.plot(u, 100 * ratios[:, i], label=f"bolt {i + 1}")
    ax2.set_xlabel("displacement [mm]")
    ax2.set_ylabel("share of total load [%]")
    ax2.legend()
    return _save(fig, path)


def plot_trace(trace, path):
    it = [r.iteration for r in trace.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(it, [r.best_u for r in trace.rows], label="best")
    ax.plot(it, [r.mean_u for r in trace.rows], alpha=0.6, label="population mean")
    ax.set_xlabel("iteration")
    ax.set_ylabel("unevenness u")
    ax.set_title(f"{trace.method.upper()} with {trace.backend} fitness")
    ax.legend()
    return _save(fig, path)


def plot_training(history, path):
    ep = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(ep, [h.train_wmse for h in history], label="train")
    ax.semilogy(ep, [h.val_wmse for h in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("weighted MSE")
    ax.legend()
    return _save(fig, path)


def plot_parity(pred, target, path, r2: float | None = None):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(target, pred, s=6, alpha=0.6)
    lim = [0, max(1e-9, float(np.max(target)), float(np.max(pred)))]
    ax.plot(lim, lim, "k--", lw=1)
    ax.set_xlabel("solver u")
    ax.set_ylabel("surrogate u")
    if r2 is not None:
        ax.set_title(f"R² = {r2:.4f}")
    return _save(fig, path)
