"""
Cells of the training experiments: one (variant, grid value, seed) each.
"""

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from beartype.typing import Any, Dict, List

from ..errors import DivergenceError
from ..experiments import SWEEPS, ExperimentConfig, write_trajectory_csv
from ..logger import logger
from ..misc import derive_seed
from ..optimizer import Trajectory, run_hetero_sgd, run_pooled_gd, run_quadratic_sgd
from ..sensing import (
    EnvironmentCoefficients,
    EnvironmentDistribution,
    GroundTruthModel,
    make_ground_truth,
    sample_environments,
)
from ..typechecker import optional_typecheck


@dataclass(frozen=True)
class Cell:
    variant: str
    grid_value: float
    seed: int

    @property
    def key(self) -> str:
        return f"{self.variant}_g{self.grid_value:g}_s{self.seed}"


@dataclass(frozen=True)
class CellResult:
    key: str
    status: str
    message: str
    row: Dict[str, Any]


@optional_typecheck
def cell_variants(config: ExperimentConfig) -> List[str]:
    "runner for modes, parameterization for compare-parameterization"
    if config.experiment == "compare-pooled":
        return [config.mode if config.mode != "pooled" else "hetero", "pooled"]
    if config.experiment == "compare-parameterization":
        return ["overparam-d", "exact"]
    return [config.mode]


@optional_typecheck
def build_cells(config: ExperimentConfig) -> List[Cell]:
    grid = config.grid if config.experiment in SWEEPS else [config.dist.level]
    return [
        Cell(variant=variant, grid_value=float(g), seed=seed)
        for g in grid
        for variant in cell_variants(config)
        for seed in config.seeds
    ]


@optional_typecheck
def pooled_environments(
    dist: EnvironmentDistribution, n: int, seed: int
) -> List[EnvironmentCoefficients]:
    """n environments in antithetic pairs Sigma, 2 E[Sigma] - Sigma so that
    the pooled coefficients average exactly to the mean of the law."""
    assert n >= 1, f"Need at least one environment, got {n}"
    if dist.kind == "custom-table":
        mean = sum(p * mat for p, mat in dist.table)
    else:
        mean = np.diag(dist.diagonal_mean())
    envs = []
    for env in sample_environments(dist, (n + 1) // 2, seed):
        envs.append(env)
        envs.append(
            EnvironmentCoefficients(sigma=2 * mean - env.sigma, env_id=f"{env.env_id}-anti")
        )
    return envs[:n]


def _cell_model(config: ExperimentConfig, seed: int) -> GroundTruthModel:
    model_cfg = config.model
    return make_ground_truth(
        model_cfg.d,
        model_cfg.r1,
        model_cfg.r2,
        derive_seed(seed, "model"),
        orthogonal=model_cfg.orthogonal,
    )


def _run(config: ExperimentConfig, cell: Cell) -> Trajectory:
    opt = config.optimizer
    level = None
    if config.experiment == "sweep-heterogeneity":
        level = cell.grid_value
    elif config.experiment == "sweep-stepsize":
        opt = dataclasses.replace(opt, eta=cell.grid_value)
    elif config.experiment == "compare-parameterization":
        opt = dataclasses.replace(opt, parameterization=cell.variant)

    model = _cell_model(config, cell.seed)
    dist = config.dist.build(config.model.r2, level)
    runner = cell.variant if cell.variant in ("hetero", "pooled", "quadratic") else config.mode
    if runner == "pooled":
        # one dataset mixes environments, the shrinkage target is undefined
        opt = dataclasses.replace(opt, shrinkage=None)
        envs = pooled_environments(
            dist, config.dist.n_envs, derive_seed(cell.seed, "pooled-envs")
        )
        return run_pooled_gd(model, envs, opt, cell.seed)
    if runner == "quadratic":
        return run_quadratic_sgd(model, dist, opt, cell.seed)
    return run_hetero_sgd(model, dist, opt, cell.seed)


@optional_typecheck
def run_cell(config: ExperimentConfig, cell: Cell, out_dir: str) -> CellResult:
    """Run one cell and write its trajectory CSV. A divergence is caught:
    the partial trajectory is written and the row is flagged."""
    status, message = "ok", ""
    try:
        trajectory = _run(config, cell)
    except DivergenceError as err:
        status, message = "diverged", str(err)
        trajectory = err.trajectory
        logger.warning(f"Cell {cell.key} diverged: {err}")

    rel_path = Path("trajectories") / f"{cell.key}.csv"
    row = {
        "grid_value": cell.grid_value,
        "variant": cell.variant,
        "seed": cell.seed,
        "final_recovery_error": math.nan,
        "final_q_fro": math.nan,
        "final_sigma1_r": math.nan,
        "diverged": status == "diverged",
        "steps_completed": 0,
        "trajectory_file": "",
    }
    if trajectory is not None and trajectory.records:
        write_trajectory_csv(trajectory, Path(out_dir) / rel_path)
        last = trajectory.records[-1]
        row.update(
            final_recovery_error=last.recovery_error,
            final_q_fro=last.q_fro,
            final_sigma1_r=last.sigma1_r,
            steps_completed=last.t,
            trajectory_file=rel_path.as_posix(),
        )
    return CellResult(key=cell.key, status=status, message=message, row=row)
