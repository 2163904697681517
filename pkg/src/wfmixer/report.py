"""Report rendering: delimited tables plus matplotlib figures on disk."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport

METRIC_COLUMNS = ("mae", "psnr", "ssim")


def write_report(report: MetricsReport, out_dir, fmt: str = "csv") -> list[Path]:
    """Write the delimited report and render figures next to it.

    Returns the list of files written: a ``report.csv``/``report.md`` table
    and one heatmap figure per metric.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        table = out_dir / "report.csv"
        table.write_text(report.to_csv())
    elif fmt == "md":
        table = out_dir / "report.md"
        table.write_text(report.to_markdown())
    else:
        raise ValueError(f"unknown report format {fmt!r} (csv, md)")
    written.append(table)
    written.extend(render_metric_heatmaps(report, out_dir))
    return written


def render_metric_heatmaps(report: MetricsReport, out_dir) -> list[Path]:
    """One kind x interval heatmap per metric, values annotated."""
    out_dir = Path(out_dir)
    kinds = list(dict.fromkeys(row["kind"] for row in report.cells))
    intervals = list(dict.fromkeys(row["interval"] for row in report.cells))
    paths = []
    for metric in METRIC_COLUMNS:
        grid = np.full((len(kinds), len(intervals)), np.nan)
        for row in report.cells:
            grid[kinds.index(row["kind"]), intervals.index(row["interval"])] = row[metric]
        fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(intervals), 1.2 + 0.6 * len(kinds)))
        im = ax.imshow(grid, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(intervals)), intervals)
        ax.set_yticks(range(len(kinds)), kinds)
        ax.set_xlabel("mask ratio interval")
        ax.set_title(metric.upper())
        for i in range(len(kinds)):
            for j in range(len(intervals)):
                if np.isfinite(grid[i, j]):
                    digits = 4 if metric == "mae" else 3 if metric == "ssim" else 2
                    ax.text(j, i, f"{grid[i, j]:.{digits}f}",
                            ha="center", va="center", fontsize=8, color="w")
        fig.colorbar(im, ax=ax, shrink=0.8)
        fig.tight_layout()
        path = out_dir / f"report_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def render_loss_curves(history: list[dict], path) -> Path:
    """Generator/discriminator loss curves over training steps."""
    path = Path(path)
    steps = [row["step"] for row in history]
    fig, (ax_g, ax_d) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("g_total", "g_rec", "g_perc", "g_adv", "g_fm"):
        ax_g.plot(steps, [row[key] for row in history], label=key, linewidth=1)
    ax_g.set_yscale("log")
    ax_g.set_xlabel("step")
    ax_g.set_title("generator losses")
    ax_g.legend(fontsize=7)
    for key in ("d_adv", "d_gp"):
        ax_d.plot(steps, [row[key] for row in history], label=key, linewidth=1)
    ax_d.set_yscale("log")
    ax_d.set_xlabel("step")
    ax_d.set_title("discriminator losses")
    ax_d.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
