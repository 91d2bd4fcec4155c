"""Matplotlib figures rendered next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .classifier import CTType
from .features import FEATURE_NAMES

_COLORS = {CTType.BCT: "tab:blue", CTType.BNCT: "tab:green", CTType.NCT: "tab:red"}


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trajectory(path, tr, alpha=None, beta=None, max_points=200_000):
    stride = max(1, len(tr) // max_points)
    t = tr.times()[::stride]
    fig, ax = plt.subplots(figsize=(10, 3))
    ax.plot(t, tr.x[::stride], lw=0.4, color="k")
    if alpha is not None:
        ax.axhline(alpha, color="tab:red", lw=0.8)
        ax.axhline(-alpha, color="tab:red", lw=0.8)
    if beta is not None:
        ax.axhline(beta, color="tab:green", lw=0.8)
        ax.axhline(-beta, color="tab:green", lw=0.8)
    ax.set_xlabel("t (s)")
    ax.set_ylabel("x")
    _save(fig, path)


def plot_accuracy_curve(path, curves: dict[str, list[tuple[float, float]]]):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, pts in curves.items():
        t = [p[0] for p in pts]
        a = [p[1] for p in pts]
        ax.plot(t, a, marker="o", ms=3, label=label)
    ax.set_xlabel("T (s since onset)")
    ax.set_ylabel("held-out accuracy")
    ax.set_ylim(0, 1.05)
    ax.axvline(0.0, color="gray", lw=0.8, ls="--")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_proportions(path, rows):
    """rows: (t_minus, prop_filt, prop_bct, prop_bnct, prop_nct)."""
    t_minus = [r[0] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for idx, ct in ((2, CTType.BCT), (3, CTType.BNCT), (4, CTType.NCT)):
        ax1.plot(t_minus, [r[idx] for r in rows], marker="o",
                 color=_COLORS[ct], label=ct.name)
    ax1.set_xlabel("pre-window start (s)")
    ax1.set_ylabel("fraction of filtered transitions")
    ax1.set_ylim(0, 1)
    ax1.legend(fontsize=8)
    ax2.plot(t_minus, [r[1] for r in rows], marker="s", color="k")
    ax2.set_xlabel("pre-window start (s)")
    ax2.set_ylabel("filtered / detected")
    ax2.set_ylim(0, 1)
    _save(fig, path)


def plot_mpi(path, mpi: np.ndarray, std: np.ndarray, names=FEATURE_NAMES):
    names = list(names)[: len(mpi)]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    pos = np.arange(len(names))
    ax.bar(pos, mpi, yerr=std, color="tab:purple", capsize=3)
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean permutation importance")
    ax.axhline(0, color="k", lw=0.8)
    _save(fig, path)


def plot_mffe(path, rows):
    """rows: (T, mffe_bct, mffe_bnct, mffe_nct) with NaN for absent types."""
    t = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for idx, ct in ((1, CTType.BCT), (2, CTType.BNCT), (3, CTType.NCT)):
        vals = [r[idx] for r in rows]
        ax.plot(t, vals, marker="o", ms=3, color=_COLORS[ct], label=ct.name)
    ax.set_xlabel("T (s since onset)")
    ax.set_ylabel("mean feature fit error")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_residence_hists(path, durations: dict[float, tuple[np.ndarray, np.ndarray]]):
    fig, (ax_s, ax_ns) = plt.subplots(1, 2, figsize=(9, 3.5))
    for sigma, (s_durs, ns_durs) in sorted(durations.items()):
        ax_s.hist(s_durs, bins=40, density=True, histtype="step",
                  label=f"shear={sigma:g}")
        ax_ns.hist(ns_durs, bins=40, density=True, histtype="step",
                   label=f"shear={sigma:g}")
    ax_s.set_xlabel("high-state residence (s)")
    ax_ns.set_xlabel("low-state residence (s)")
    for ax in (ax_s, ax_ns):
        ax.set_ylabel("density")
        ax.legend(fontsize=8)
    _save(fig, path)


def plot_feature_track(path, ft):
    fig, axes = plt.subplots(4, 2, figsize=(9, 8), sharex=True)
    vt = ft.value_times()
    st = ft.slope_times()
    for row, name in enumerate(("gv", "log10gv", "ac", "log10gv_ac")):
        axes[row, 0].plot(vt, getattr(ft, name), lw=0.6)
        axes[row, 0].set_ylabel(name, fontsize=8)
        m_name = "m_" + name
        axes[row, 1].plot(st, getattr(ft, m_name), lw=0.8, color="tab:orange")
        axes[row, 1].set_ylabel(m_name, fontsize=8)
    for ax in axes.ravel():
        ax.axvline(0.0, color="tab:red", lw=0.8)
    axes[-1, 0].set_xlabel("T (s since onset)")
    axes[-1, 1].set_xlabel("T (s since onset)")
    _save(fig, path)
