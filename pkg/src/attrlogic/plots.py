"""Figure rendering for the report paths.

All figures are written to files with the non-interactive Agg backend;
matplotlib is imported lazily so library users who never render pay no
import cost.
"""

import numpy as np

__all__ = ["save_training_curves", "save_score_distributions"]


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_training_curves(log, path) -> None:
    """Plot per-epoch loss and the hard consistency statistics."""
    plt = _plt()
    epochs = [entry["epoch"] for entry in log]
    fig, (ax_loss, ax_stats) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [entry["loss"] for entry in log], color="tab:blue")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.grid(True, alpha=0.3)
    ax_stats.plot(epochs, [entry["p_ex"] for entry in log], label="p_ex", color="tab:red")
    ax_stats.plot(epochs, [entry["p_d"] for entry in log], label="p_d", color="tab:green")
    if "val_acc_avg" in log[0]:
        ax_stats.plot(
            epochs, [entry["val_acc_avg"] for entry in log], label="val acc", color="tab:blue"
        )
    ax_stats.set_xlabel("epoch")
    ax_stats.set_ylim(-0.05, 1.05)
    ax_stats.legend()
    ax_stats.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_score_distributions(demographic, histograms, path) -> None:
    """Plot genuine and impostor score densities per pair category.

    ``histograms`` is the (tag, category) -> (edges, counts) mapping
    produced by distribution_histograms.
    """
    plt = _plt()
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8), sharex=True)
    for ax, tag in zip(axes, ("genuine", "impostor")):
        for (t, cat), (edges, counts) in sorted(histograms.items()):
            if t != tag or counts.sum() == 0:
                continue
            centers = (edges[:-1] + edges[1:]) / 2.0
            density = counts / counts.sum()
            ax.plot(centers, density, label=f"({cat[0]},{cat[1]})")
        ax.set_title(f"{demographic} {tag}")
        ax.set_xlabel("cosine similarity")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=7)
    axes[0].set_ylabel("fraction of pairs")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
