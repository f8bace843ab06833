#src/analytics/plots.py
import os
from typing import Dict, Optional

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.patches import Patch
import pandas as pd

from src.imaging.image import Image

DEFAULT_PLOTS_DIR = "plots"


def _ensure_plots_dir(plots_dir: Optional[str] = None) -> str:
    """Make sure the plots directory exists; DHFF_PLOTS_DIR is read at call time."""
    target = plots_dir or os.getenv("DHFF_PLOTS_DIR", DEFAULT_PLOTS_DIR)
    os.makedirs(target, exist_ok=True)
    return target


def _show(ax, img: Image, title: str) -> None:
    if img.channels == 1:
        ax.imshow(img.data[:, :, 0], cmap="gray", vmin=0.0, vmax=1.0)
    else:
        ax.imshow(img.data)
    ax.set_title(title, fontsize=9)
    ax.axis("off")


def plot_iist_trace(
    trace_df: pd.DataFrame,
    filename: str = "iist_trace",
    *,
    epsilon: Optional[float] = None,
    plots_dir: Optional[str] = None,
) -> Optional[str]:
    """
    Two panels: final stage loss per k (log scale) and the mean absolute
    difference to the previous stage output, with the epsilon stop line.

    Returns:
        Path to the saved PNG, or None for an empty trace.
    """
    if trace_df.empty:
        return None

    target = _ensure_plots_dir(plots_dir)
    path = os.path.join(target, f"{filename}.png")

    fig, (ax_loss, ax_diff) = plt.subplots(1, 2, figsize=(10, 4))

    ax_loss.plot(trace_df["k"], trace_df["loss"], marker="o", markersize=3)
    ax_loss.set_yscale("log")
    ax_loss.set_xlabel("stage k")
    ax_loss.set_ylabel("final loss")
    ax_loss.set_title("Stage loss")

    diffs = trace_df.dropna(subset=["diff_to_prev"])
    ax_diff.plot(diffs["k"], diffs["diff_to_prev"], marker="o", markersize=3)
    if epsilon is not None:
        ax_diff.axhline(epsilon, color="red", linestyle="--", linewidth=1, label=f"epsilon = {epsilon:g}")
        ax_diff.legend()
    ax_diff.set_xlabel("stage k")
    ax_diff.set_ylabel("mean |T(k) - T(k-1)|")
    ax_diff.set_title("Change between stages")

    plt.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

    return path


def plot_stage_snapshots(
    opt: Image,
    sar: Image,
    snapshots: Dict[int, Image],
    final: Image,
    filename: str = "iist_snapshots",
    *,
    plots_dir: Optional[str] = None,
) -> str:
    """Optical, prepared SAR, every kept stage output and the final T2 side by side."""
    target = _ensure_plots_dir(plots_dir)
    path = os.path.join(target, f"{filename}.png")

    panels = [(opt, "optical"), (sar, "SAR (prepared)")]
    panels += [(img, f"stage k={k}") for k, img in sorted(snapshots.items())]
    panels.append((final, "T2 (final)"))

    fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6))
    for ax, (img, title) in zip(axes, panels):
        _show(ax, img, title)

    plt.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

    return path


def plot_error_map(
    error_rgb: Image,
    title: str = "Change detection errors",
    filename: str = "error_map",
    *,
    plots_dir: Optional[str] = None,
) -> str:
    """Error map with a legend: green hit, red false alarm, blue miss."""
    target = _ensure_plots_dir(plots_dir)
    path = os.path.join(target, f"{filename}.png")

    fig, ax = plt.subplots(figsize=(5, 5))
    _show(ax, error_rgb, title)
    handles = [
        Patch(color=(0.0, 1.0, 0.0), label="detected change"),
        Patch(color=(1.0, 0.0, 0.0), label="false alarm"),
        Patch(color=(0.0, 0.0, 1.0), label="missed change"),
    ]
    ax.legend(handles=handles, loc="lower center", bbox_to_anchor=(0.5, -0.18), ncol=3, fontsize=7)

    plt.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

    return path


def plot_comparison(
    df: pd.DataFrame,
    title: str = "Detection accuracy per configuration",
    filename: str = "comparison",
    *,
    plots_dir: Optional[str] = None,
) -> Optional[str]:
    """
    Grouped Ra / Ka bars for each row of a comparison table.

    Rows are labelled "variant pooling content_layer" with empty parts dropped.
    """
    if df.empty:
        return None

    target = _ensure_plots_dir(plots_dir)
    path = os.path.join(target, f"{filename}.png")

    labels = [
        " ".join(str(part) for part in (row.variant, row.pooling, row.content_layer) if part)
        for row in df.itertuples()
    ]
    x = list(range(len(labels)))
    width = 0.4

    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(labels)), 4.5))
    ax.bar([i - width / 2 for i in x], df["Ra"], width, label="Ra (%)")
    ax.bar([i + width / 2 for i in x], df["Ka"], width, label="Ka (%)")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylim(min(0.0, float(df["Ka"].min()) - 5.0), 105.0)
    ax.set_title(title)
    ax.legend()

    # Label each bar with its value
    for xi, (ra, ka) in enumerate(zip(df["Ra"], df["Ka"])):
        ax.text(xi - width / 2, ra + 1.0, f"{ra:.1f}", ha="center", va="bottom", fontsize=7)
        ax.text(xi + width / 2, ka + 1.0, f"{ka:.1f}", ha="center", va="bottom", fontsize=7)

    plt.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

    return path


def plot_lambda_sweep(
    df: pd.DataFrame,
    filename: str = "lambda_sweep",
    *,
    plots_dir: Optional[str] = None,
) -> Optional[str]:
    """Ra and Ka against lambda_c on a log axis; None when there is nothing to draw."""
    if df.empty:
        return None

    target = _ensure_plots_dir(plots_dir)
    path = os.path.join(target, f"{filename}.png")

    ordered = df.sort_values("lambda_c")
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ordered["lambda_c"], ordered["Ra"], marker="o", label="Ra (%)")
    ax.plot(ordered["lambda_c"], ordered["Ka"], marker="s", label="Ka (%)")
    ax.set_xscale("log")
    ax.set_xlabel("lambda_c")
    ax.set_ylabel("%")
    ax.set_title("Detection accuracy vs content weight")
    ax.legend()

    plt.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

    return path
