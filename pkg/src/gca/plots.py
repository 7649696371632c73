"""Figures rendered from result ledgers."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from gca.errors import MissingFieldError  # noqa: E402
from gca.metrics import auprc_vs_rmse_trace  # noqa: E402

LOSS_KEYS = ("recon_src", "recon_tgt", "kl_src", "kl_tgt", "disc", "sparsity_src", "sparsity_tgt", "strengthen", "total")
# every heatmap cell of the structure grid is this many inches square
PANEL_INCHES = 1.6
DPI = 100


def _require(ledger: Mapping, key: str):
    if key not in ledger or ledger[key] in (None, [], {}):
        raise MissingFieldError(f"ledger lacks {key!r}")
    return ledger[key]


def plot_auprc_rmse(ledger: Mapping, path) -> Path:
    epochs = _require(ledger, "epochs")
    trace = auprc_vs_rmse_trace(epochs, "auprc_src", "test_rmse")
    fig, ax = plt.subplots(figsize=(6, 4), dpi=DPI)
    ax.plot(trace["epoch"], trace["auprc"], "o-", color="tab:blue", label="AUPRC (source)")
    if all("auprc_tgt" in e for e in epochs):
        ax.plot(trace["epoch"], [e["auprc_tgt"] for e in epochs], "s--", color="tab:cyan", label="AUPRC (target)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("AUPRC")
    ax.set_ylim(0, 1.02)
    ax2 = ax.twinx()
    ax2.plot(trace["epoch"], trace["rmse"], "^-", color="tab:red", label="test RMSE (target)")
    ax2.set_ylabel("RMSE")
    handles = ax.get_legend_handles_labels()[0] + ax2.get_legend_handles_labels()[0]
    ax.legend(handles, [h.get_label() for h in handles], loc="center right", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_structures(ledger: Mapping, path) -> Path:
    """Grid of ``k`` rows (lags) by three columns: source, target, ground truth."""
    s = _require(ledger, "structures")
    src = np.asarray(_require(s, "source"), dtype=float)
    tgt = np.asarray(_require(s, "target"), dtype=float)
    truth = s.get("truth_target") or s.get("truth_source")
    if truth is None:
        raise MissingFieldError("ledger structures lack a ground truth")
    truth = np.asarray(truth, dtype=float)
    if not src.shape == tgt.shape == truth.shape or src.ndim != 3:
        raise ValueError(f"structure shapes differ: {src.shape}, {tgt.shape}, {truth.shape}")
    k = src.shape[0]
    fig, axes = plt.subplots(k, 3, figsize=(3 * PANEL_INCHES, k * PANEL_INCHES), dpi=DPI, squeeze=False)
    for j in range(k):
        for col, (title, mat) in enumerate((("source", src), ("target", tgt), ("truth", truth))):
            ax = axes[j, col]
            ax.imshow(mat[j], vmin=0, vmax=1, cmap="viridis", interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if j == 0:
                ax.set_title(title, fontsize=8)
            if col == 0:
                ax.set_ylabel(f"lag {j + 1}", fontsize=8)
    return _save(fig, path)


def plot_losses(ledger: Mapping, path) -> Path:
    history = _require(ledger, "loss_history")
    keys = [k for k in LOSS_KEYS if k in history[0]]
    if not keys:
        raise MissingFieldError("loss history has no known loss components")
    fig, ax = plt.subplots(figsize=(7, 4), dpi=DPI)
    steps = [rec.get("step", i) for i, rec in enumerate(history)]
    for key in keys:
        ax.plot(steps, [rec[key] for rec in history], label=key, linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    return _save(fig, path)


def plot_ledger(ledger: Mapping, out_dir, stem: str = "run") -> list[Path]:
    if not ledger:
        raise MissingFieldError("empty ledger")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        plot_auprc_rmse(ledger, out / f"{stem}_auprc_rmse.png"),
        plot_structures(ledger, out / f"{stem}_structures.png"),
        plot_losses(ledger, out / f"{stem}_losses.png"),
    ]


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path
