"""Figures rendered from the CSV/JSON reports. Headless (Agg) only."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120
_META = {"Software": None}  # keep PNG bytes independent of the matplotlib version string


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata=_META)
    plt.close(fig)
    return path


def reliability_diagram(curves, path, title="Calibration"):
    """``curves`` maps a label to ``(grid, obs)``."""
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax.plot([0, 1], [0, 1], color="0.6", lw=1, ls="--")
    for label, (grid, obs) in curves.items():
        ax.plot(grid, obs, lw=1.5, label=label)
        ax2.plot(grid, np.asarray(obs) - np.asarray(grid), lw=1.5, label=label)
    ax.set(xlabel="nominal level p", ylabel="Obs(p)", xlim=(0, 1), ylim=(0, 1), title=title)
    ax2.axhline(0.0, color="0.6", lw=1, ls="--")
    ax2.set(xlabel="nominal level p", ylabel="Obs(p) - p", xlim=(0, 1), title="Coverage deviation")
    ax.legend(fontsize=8)
    return _save(fig, path)


def condition_band(rows, path, bound=None, title="Condition ratio of sigma0"):
    """Per-batch mean with min-max band; ``rows`` are dicts with step/mean/min/max."""
    step = np.array([r["step"] for r in rows], dtype=float)
    mean = np.array([r["mean"] for r in rows], dtype=float)
    lo = np.array([r["min"] for r in rows], dtype=float)
    hi = np.array([r["max"] for r in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    finite = np.isfinite(hi) & (lo > 0)
    ax.fill_between(step[finite], lo[finite], hi[finite], alpha=0.3, label="min-max")
    ax.plot(step[finite], mean[finite], lw=1.2, label="mean")
    if bound is not None:
        ax.axhline(bound, color="k", ls=":", lw=1, label=f"bound {bound:.3g}")
    if np.any(finite):
        ax.set_yscale("log")
    ax.set(xlabel="step", ylabel="lambda_max / lambda_min", title=title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def equivariance_histograms(hists, path):
    """``hists`` maps a quantity to ``(edges, counts)``."""
    fig, axes = plt.subplots(1, len(hists), figsize=(4.5 * len(hists), 3.5), squeeze=False)
    for ax, (name, (edges, counts)) in zip(axes[0], hists.items()):
        edges = np.asarray(edges, dtype=float)
        ax.stairs(counts, edges, fill=True, alpha=0.7)
        ax.set(xlabel=f"{name} deviation", ylabel="count", title=name)
        ax.ticklabel_format(axis="x", style="sci", scilimits=(-3, 3))
    return _save(fig, path)


def uncertainty_scatter(groups, path):
    """``groups`` maps a label to ``(u_scalar, error_norm)``."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (u, err) in groups.items():
        ax.scatter(u, err, s=3, alpha=0.4, label=label)
    ax.set(xscale="log", yscale="log", xlabel="u_scalar", ylabel="|force error|")
    ax.legend(fontsize=8, markerscale=3)
    return _save(fig, path)


def loss_curves(epochs, path):
    ep = [r["epoch"] for r in epochs]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ep, [r["train_loss"] for r in epochs], label="train")
    ax.plot(ep, [r["val_loss"] for r in epochs], label="val")
    ax.set(xlabel="epoch", ylabel="loss")
    ax.legend(fontsize=8)
    return _save(fig, path)
