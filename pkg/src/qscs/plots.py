"""SVG learning-curve charts with dashed reference lines."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .baselines import reference_lines  # noqa: E402

# fixed salt and no date keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "qscs"
matplotlib.rcParams["svg.fonttype"] = "path"


def build_figure(result):
    """Line chart of the seed-mean 10-episode MA per cell, with dashed reference lines."""
    from .harness import moving_average

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for (cell, agent), runs in result.series.items():
        curve = moving_average(np.mean(runs, axis=0), 10)
        ax.plot(np.arange(len(curve)), curve, linewidth=1.2, label=f"{agent} {result.axis}={cell}")
    colors = {"GRAPE": "0.2", "MPC": "0.45", "Human": "0.65"}
    for name, value in reference_lines().items():
        ax.axhline(value, color=colors.get(name, "0.3"), linestyle="--", linewidth=1.0,
                   label=f"{name} ({value:.2f})")
    ax.set_xlabel("episode")
    ax.set_ylabel("episode reward (10-episode MA)")
    ax.set_title(result.study)
    ax.legend(fontsize=6, ncol=2, loc="lower right")
    fig.tight_layout()
    return fig, ax


def emit_plots(result, out_dir) -> Path | None:
    """Write ``<study>.svg``; returns its path, or None when there is nothing to plot."""
    if not result.series:
        print(f"{result.study}: nothing to plot")
        return None
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, _ = build_figure(result)
    path = out_dir / f"{result.study}.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
