#!/usr/bin/env python3
# License: BSD-3-Clause

import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from relaxplan.models import GridWorkspace, Scenario  # noqa: E402
from relaxplan.scenarios import Trajectory  # noqa: E402

logger = logging.getLogger(__name__)


def _save(fig, outdir: str, stem: str) -> str:
    if not os.path.exists(outdir):
        os.makedirs(outdir)
    outpath_png = os.path.join(outdir, f"{stem}.png")
    outpath_pdf = os.path.join(outdir, f"{stem}.pdf")
    logger.info(f"Saving plot to {outpath_png}")
    fig.savefig(outpath_png, dpi=300, bbox_inches="tight")
    fig.savefig(outpath_pdf, bbox_inches="tight")
    plt.close(fig)
    return outpath_png


def plot_trajectory(scenario: Scenario, trajectory: Trajectory, outdir: str) -> str:
    """
    Grid workspace with label probabilities and the visited cells
    """
    ws = scenario.workspace
    if not isinstance(ws, GridWorkspace):
        raise ValueError("Trajectories can only be drawn on grid workspaces")

    fig, ax = plt.subplots(figsize=(0.8 * ws.cols + 1, 0.8 * ws.rows + 1))
    ax.set_aspect("equal")

    obstacle = np.zeros((ws.rows, ws.cols))
    for cell, labels in ws.labels.items():
        r, c = (int(v) for v in cell[1:].split("c"))
        obstacle[r, c] = sum(p for label, p in labels.items() if "Obs" in label)
        text = "\n".join(
            f"{label}:{p:g}" if p < 1 else label for label, p in labels.items()
        )
        ax.text(c, r, text, ha="center", va="center", fontsize=7)
    ax.imshow(obstacle, cmap="Reds", vmin=0, vmax=1, alpha=0.6)

    names = trajectory.visited_mdp_states()
    cells = [tuple(int(v) for v in name[1:].split("c")) for name in names]
    ys = [r for r, _ in cells]
    xs = [c for _, c in cells]
    jitter = np.linspace(-0.15, 0.15, len(xs)) if xs else []
    ax.plot(np.add(xs, jitter), np.add(ys, jitter), color="tab:blue", marker=".", lw=1)
    if xs:
        ax.scatter([xs[0]], [ys[0]], color="black", zorder=3, label="start")

    ax.set_xticks(range(ws.cols))
    ax.set_yticks(range(ws.rows))
    ax.set_xlim(-0.5, ws.cols - 0.5)
    ax.set_ylim(ws.rows - 0.5, -0.5)
    ax.grid(True, color="gray", linestyle="dotted", alpha=0.5)
    ax.set_title(
        f"{scenario.name}: {len(names) - 1} steps, violation {trajectory.total_violation:g}",
        fontsize=12,
    )
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, outdir, f"{scenario.name}_trajectory")


def plot_learning_curve(curve: pd.DataFrame, outdir: str, name: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(curve["episode"], curve["mean_reward"], color="black", lw=1)
    ax.set_xlabel("Episode", fontsize=12)
    ax.set_ylabel("Mean accumulated reward", fontsize=12)
    ax.grid(True, color="gray", linestyle="dotted", which="both", alpha=0.5)
    plt.tight_layout()
    return _save(fig, outdir, f"{name}_learning_curve")
