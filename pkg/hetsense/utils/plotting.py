"""
SVG figures computed from the CSV artifacts only, so they can be redrawn
without rerunning anything.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
from beartype.typing import Union  # noqa: E402

from .logger import logger  # noqa: E402
from .typechecker import optional_typecheck  # noqa: E402


@optional_typecheck
def plot_summary(summary_csv: Union[str, Path], out_svg: Union[str, Path]) -> Path:
    """Mean final ||Q_T||_F and recovery error against the grid value, one
    line per variant, with standard error bars over the seeds."""
    frame = pd.read_csv(summary_csv)
    frame = frame[~frame["diverged"].astype(bool)]
    stats = (
        frame.groupby(["variant", "grid_value"])[["final_q_fro", "final_recovery_error"]]
        .agg(["mean", "sem"])
        .fillna(0.0)
    )
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, metric, label in zip(
        axes,
        ["final_q_fro", "final_recovery_error"],
        ["final ||Q_T||_F", "final recovery error"],
    ):
        for variant, sub in stats.groupby(level="variant"):
            grid = sub.index.get_level_values("grid_value")
            ax.errorbar(
                grid,
                sub[(metric, "mean")],
                yerr=sub[(metric, "sem")],
                marker="o",
                capsize=3,
                label=variant,
            )
        ax.set_xlabel("grid value")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    out_svg = Path(out_svg)
    fig.savefig(out_svg, format="svg")
    plt.close(fig)
    logger.debug(f"Wrote {out_svg}")
    return out_svg


@optional_typecheck
def plot_trajectory(trajectory_csv: Union[str, Path], out_svg: Union[str, Path]) -> Path:
    "singular values of R_t, ||Q_t||_F and the recovery error along one run"
    frame = pd.read_csv(trajectory_csv, dtype={"env_id": str})
    fig, ax = plt.subplots(figsize=(6, 4))
    for column, label in [
        ("sigma1_r", "sigma_1(R_t)"),
        ("sigma_min_r", "sigma_min(R_t)"),
        ("q_fro", "||Q_t||_F"),
        ("recovery_error", "recovery error"),
    ]:
        ax.plot(frame["t"], frame[column], label=label)
    ax.set_xlabel("step")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out_svg = Path(out_svg)
    fig.savefig(out_svg, format="svg")
    plt.close(fig)
    return out_svg
