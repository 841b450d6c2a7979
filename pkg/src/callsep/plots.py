"""Figure rendering for the report paths (all headless via the Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _finish(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_length_sweep(rows: list[dict], out_path) -> Path:
    """Mean synchronization error versus streaming segment length."""
    lengths = [row["segment_len_s"] for row in rows]
    errors = [row["mean_error_pct"] for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(lengths, errors, marker="o", color="tab:blue")
    ax.set_xlabel("Segment length (s)")
    ax.set_ylabel("Mean synchronization error (%)")
    ax.set_title("Synchronization error vs. segment length")
    ax.grid(True, alpha=0.3)
    return _finish(fig, out_path)


def plot_training_curves(record, out_path) -> Path:
    """Train loss and validation SI-SDR per epoch on twin axes."""
    epochs = list(range(1, len(record.train_losses) + 1))
    fig, ax1 = plt.subplots(figsize=(7, 4.5))
    ax1.plot(epochs, record.train_losses, color="tab:red", label="train loss")
    ax1.set_xlabel("Epoch")
    ax1.set_ylabel("Train loss", color="tab:red")
    ax1.tick_params(axis="y", labelcolor="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, record.validation_si_sdr, color="tab:blue", label="val SI-SDR")
    ax2.set_ylabel("Validation SI-SDR (dB)", color="tab:blue")
    ax2.tick_params(axis="y", labelcolor="tab:blue")
    if record.best_epoch:
        ax2.axvline(record.best_epoch, color="tab:gray", linestyle="--", alpha=0.6)
    ax1.set_title("Training curves")
    ax1.grid(True, alpha=0.3)
    return _finish(fig, out_path)


def plot_segment_distances(report, out_path) -> Path:
    """Per-segment clean-vs-delivered distances with the decision threshold."""
    idx = list(range(len(report.distances)))
    d1 = [d[0] for d in report.distances]
    d2 = [d[1] for d in report.distances]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(idx, d1, marker="o", label="channel 1", color="tab:blue")
    ax.plot(idx, d2, marker="s", label="channel 2", color="tab:orange")
    ax.axhline(report.threshold, color="tab:red", linestyle="--", label="threshold")
    for i, flag in enumerate(report.misplaced):
        if flag:
            ax.axvspan(i - 0.4, i + 0.4, color="tab:red", alpha=0.12)
    ax.set_xlabel("Segment index")
    ax.set_ylabel("Euclidean distance")
    ax.set_title(
        f"Segment distances ({report.segment_len_s:g} s segments, "
        f"error {report.render_pct()}%)"
    )
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _finish(fig, out_path)


def plot_sweep_heatmap(cells: list[dict], out_path) -> Path:
    """Best validation SI-SDR per (similarity weight, embedding layer) cell."""
    ok = [c for c in cells if c.get("best_si_sdr") is not None]
    weights = sorted({c["weight_sl"] for c in ok})
    layers = sorted({c["layer"] for c in ok})
    import numpy as np

    grid = np.full((len(weights), len(layers)), np.nan)
    for c in ok:
        grid[weights.index(c["weight_sl"]), layers.index(c["layer"])] = c["best_si_sdr"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    im = ax.imshow(grid, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(layers)), [str(l) for l in layers])
    ax.set_yticks(range(len(weights)), [f"{w:g}" for w in weights])
    ax.set_xlabel("Embedding layer")
    ax.set_ylabel("Similarity weight")
    ax.set_title("Sweep: best validation SI-SDR (dB)")
    for i in range(len(weights)):
        for j in range(len(layers)):
            if not np.isnan(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", color="w")
    fig.colorbar(im, ax=ax, label="SI-SDR (dB)")
    return _finish(fig, out_path)


def plot_similarity_histogram(rows: list[dict], out_path) -> Path:
    """Distribution of inter-source cosine similarity over a corpus."""
    values = [row["css"] for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.hist(values, bins=30, color="tab:purple", alpha=0.8)
    ax.set_xlabel("Cosine similarity between paired sources")
    ax.set_ylabel("Samples")
    ax.set_title("Inter-speaker similarity distribution")
    ax.grid(True, alpha=0.3)
    return _finish(fig, out_path)
