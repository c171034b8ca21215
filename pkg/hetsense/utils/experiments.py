"""
Experiment configuration, artifacts on disk and the experiment driver.

A configuration is built from layered dicts: desk-scale defaults, the full
scale defaults when `full` is set, defaults of the chosen experiment, the
config file (flat dotted keys like `model.d = 100`, or a json mirror) and
finally the command line overrides.
"""

import csv
import dataclasses
import json
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import rtoml
import scipy
import uuid6
from beartype.typing import Any, Dict, List, Literal, Optional, Union
from joblib import Parallel, delayed
from tqdm import tqdm

from .dynamics import CSV_FIELDS, PHASE_G_CAP, PHASE_G_FLOOR, MetricRecord
from .env import (
    HETSENSE_DIVERGENCE_FACTOR,
    HETSENSE_N_JOBS,
    HETSENSE_PARALLEL_BACKEND,
    HETSENSE_REFINE_STEPS,
    HETSENSE_RIP_MARGIN,
    HETSENSE_STEPS_CONSTANT,
)
from .errors import ConfigurationError, InvalidDistributionError
from .flags import is_piped, is_verbose
from .logger import logger, md_printer, red, whi, yel
from .misc import config_digest, format_float
from .optimizer import (
    DELTA_CAP,
    OptimizerConfig,
    ShrinkageConfig,
    Trajectory,
    TruncationConfig,
)
from .sensing import EnvironmentDistribution
from .typechecker import optional_typecheck

Experiment = Literal[
    "single-run",
    "sweep-heterogeneity",
    "sweep-stepsize",
    "compare-pooled",
    "compare-parameterization",
    "verify-rip",
    "verify-controller",
]
EXPERIMENTS = list(Experiment.__args__)
SWEEPS = ["sweep-heterogeneity", "sweep-stepsize"]

DESK_DEFAULTS = {
    "mode": "hetero",
    "seeds": [1, 2, 3],
    "grid": [],
    "output_dir": "hetsense_output",
    "full": False,
    "plot": False,
    "model": {"d": 50, "r1": 1, "r2": 1, "orthogonal": True},
    "dist": {"kind": "uniform-diagonal", "level": 10.0, "n_envs": 10},
    "optimizer": {
        "eta": 0.1,
        "alpha": 1e-3,
        "batch_size": 3000,
        "parameterization": "overparam-d",
        "measurement_kind": "gaussian",
    },
    "verify": {
        "trials": 200,
        "rank": 2,
        "margin": HETSENSE_RIP_MARGIN,
        "angle_trials": 10_000,
        "p": 0.1,
        "eta": 7e-6,
        "controller_steps": 200,
        "replicates": 10_000,
        "delta": 0.05,
        "envelope_etas": [0.1, 0.3],
    },
}

FULL_DEFAULTS = {
    "seeds": [1, 2, 3, 4, 5],
    "model": {"d": 100},
    "optimizer": {"batch_size": 8000},
}

EXPERIMENT_DEFAULTS = {
    "single-run": {},
    "sweep-heterogeneity": {"grid": [0.0, 1.0, 2.0, 3.0, 5.0, 8.0, 10.0, 15.0]},
    # the spurious part only dies out at large M, and eta = 0.2 diverges there
    "sweep-stepsize": {"grid": [0.005, 0.01, 0.05, 0.1], "dist": {"level": 15.0}},
    "compare-pooled": {},
    "compare-parameterization": {},
    "verify-rip": {"model": {"d": 20}, "optimizer": {"batch_size": 4000}, "seeds": [1]},
    "verify-controller": {"dist": {"kind": "two-point", "level": 2000.0}, "seeds": [1]},
}

QUADRATIC_DEFAULTS = {
    "optimizer": {
        "eta": 0.03,
        "measurement_kind": "rank-one",
        "truncation": {"enabled": True, "radius_mode": "log-inv-delta", "radius_scale": 4.0},
        "shrinkage": {"enabled": True, "tau_mode": "oracle-trace"},
    },
}

# constants of the runs that are tooling choices rather than derived values
TOOLING_DEFAULTS = {
    "steps_constant": HETSENSE_STEPS_CONSTANT,
    "divergence_factor": HETSENSE_DIVERGENCE_FACTOR,
    "rip_margin": HETSENSE_RIP_MARGIN,
    "rip_refine_steps": HETSENSE_REFINE_STEPS,
    "heterogeneity_sweep_eta": DESK_DEFAULTS["optimizer"]["eta"],
    "quadratic_eta": QUADRATIC_DEFAULTS["optimizer"]["eta"],
    "phase_g_cap": PHASE_G_CAP,
    "phase_g_floor": PHASE_G_FLOOR,
    "truncation_delta_cap": DELTA_CAP,
}


@dataclass(frozen=True)
class ModelSpec:
    d: int
    r1: int
    r2: int
    orthogonal: bool = False


@dataclass(frozen=True)
class DistSpec:
    """level is the half-width M of the uniform-diagonal law or the
    magnitude a of the two-point law. n_envs is the number of environments
    of the pooled baseline."""

    kind: Literal["uniform-diagonal", "two-point", "custom-table"]
    level: float = 0.0
    n_envs: int = 10
    table: Optional[List[Dict[str, Any]]] = None

    def build(self, r2: int, level: Optional[float] = None) -> EnvironmentDistribution:
        level = self.level if level is None else level
        if self.kind == "uniform-diagonal":
            return EnvironmentDistribution.uniform_diagonal(level, r2)
        if self.kind == "two-point":
            return EnvironmentDistribution.two_point(level, r2)
        if not self.table:
            raise ConfigurationError("A custom-table distribution needs `dist.table`")
        return EnvironmentDistribution.custom_table(
            [(float(e["prob"]), np.atleast_2d(np.asarray(e["matrix"], dtype=float))) for e in self.table]
        )


@dataclass(frozen=True)
class VerifySpec:
    trials: int = 200
    rank: int = 2
    margin: float = HETSENSE_RIP_MARGIN
    angle_trials: int = 10_000
    p: float = 0.1
    eta: float = 7e-6
    controller_steps: int = 200
    replicates: int = 10_000
    delta: float = 0.05
    envelope_etas: List[float] = field(default_factory=lambda: [0.1, 0.3])


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    model: ModelSpec
    dist: DistSpec
    optimizer: OptimizerConfig
    grid: List[float]
    seeds: List[int]
    output_dir: str
    mode: Literal["hetero", "pooled", "quadratic"] = "hetero"
    full: bool = False
    plot: bool = False
    verify: VerifySpec = field(default_factory=VerifySpec)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("The list of seeds is empty")
        if any(s < 0 for s in self.seeds):
            raise ConfigurationError(f"Seeds must be nonnegative, got {self.seeds}")
        if self.experiment in SWEEPS and not self.grid:
            raise ConfigurationError(f"Experiment '{self.experiment}' needs a nonempty grid")
        if self.model.r1 + self.model.r2 > self.model.d:
            raise ConfigurationError(
                f"r1 + r2 = {self.model.r1 + self.model.r2} exceeds d = {self.model.d}"
            )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        "covers every parameter that changes results"
        params = self.as_dict()
        for key in ["output_dir", "plot"]:
            params.pop(key)
        params["constants"] = TOOLING_DEFAULTS
        return config_digest(params)


@dataclass
class SweepSummary:
    "one row per (grid_value, variant, seed) and the per (grid_value, variant) aggregate"

    rows: List[Dict[str, Any]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=SUMMARY_FIELDS)

    def aggregate(self) -> pd.DataFrame:
        frame = self.to_frame()
        grouped = frame.groupby(["grid_value", "variant"], sort=True)
        out = grouped[["final_recovery_error", "final_q_fro", "final_sigma1_r"]].agg(
            ["mean", "sem", "count"]
        )
        out.columns = ["_".join(col) for col in out.columns]
        out["diverged"] = grouped["diverged"].sum()
        return out.reset_index()


SUMMARY_FIELDS = [
    "grid_value",
    "variant",
    "seed",
    "final_recovery_error",
    "final_q_fro",
    "final_sigma1_r",
    "diverged",
    "steps_completed",
    "trajectory_file",
]


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


# short names accepted in config files and on the command line
ALIASES = {
    ("dist", "half_width"): ("dist", "level"),
    ("dist", "magnitude"): ("dist", "level"),
    ("dist", "het"): ("dist", "level"),
    ("optimizer", "m"): ("optimizer", "batch_size"),
    ("optimizer", "measurement"): ("optimizer", "measurement_kind"),
}


def _resolve_aliases(raw: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for (section, alias), (target_section, target) in ALIASES.items():
        if isinstance(out.get(section), dict) and alias in out[section]:
            out.setdefault(target_section, {})[target] = out[section].pop(alias)
    return out


@optional_typecheck
def read_config_file(path: Union[str, Path]) -> dict:
    """Nested dict of a config file. `.json` files are parsed as json,
    anything else as flat dotted key-value text (a subset of toml)."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file '{path}' does not exist")
    text = path.read_text()
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return rtoml.loads(text)
    except Exception as err:
        raise ConfigurationError(f"Could not parse config file '{path}': {err}") from err


def _unknown_keys(merged: dict) -> List[str]:
    allowed = {
        "experiment": None,
        "mode": None,
        "seeds": None,
        "grid": None,
        "output_dir": None,
        "full": None,
        "plot": None,
        "model": {f.name for f in dataclasses.fields(ModelSpec)},
        "dist": {f.name for f in dataclasses.fields(DistSpec)},
        "optimizer": {f.name for f in dataclasses.fields(OptimizerConfig)},
        "verify": {f.name for f in dataclasses.fields(VerifySpec)},
    }
    unknown = []
    for k, v in merged.items():
        if k not in allowed:
            unknown.append(k)
        elif allowed[k] is not None:
            if not isinstance(v, dict):
                unknown.append(k)
                continue
            unknown.extend(f"{k}.{sub}" for sub in v if sub not in allowed[k])
    return unknown


@optional_typecheck
def build_config(
    raw: dict, experiment: Optional[str] = None
) -> ExperimentConfig:
    """Layer the defaults below `raw` and build the configuration.
    `experiment` is used when `raw` does not name one."""
    raw = _resolve_aliases(raw)
    experiment = raw.get("experiment", experiment) or "single-run"
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(
            f"Unknown experiment '{experiment}', expected one of {EXPERIMENTS}"
        )
    merged = DESK_DEFAULTS
    if raw.get("full", False):
        merged = _deep_merge(merged, FULL_DEFAULTS)
    merged = _deep_merge(merged, EXPERIMENT_DEFAULTS[experiment])
    if raw.get("mode") == "quadratic":
        merged = _deep_merge(merged, QUADRATIC_DEFAULTS)
    merged = _deep_merge(merged, raw)
    merged["experiment"] = experiment

    unknown = _unknown_keys(merged)
    if unknown:
        raise ConfigurationError(f"Unknown configuration keys: {', '.join(unknown)}")

    try:
        opt = dict(merged["optimizer"])
        if isinstance(opt.get("truncation"), dict):
            opt["truncation"] = TruncationConfig(**opt["truncation"])
        if isinstance(opt.get("shrinkage"), dict):
            opt["shrinkage"] = ShrinkageConfig(**opt["shrinkage"])
        for key in ["eta", "alpha", "divergence_threshold"]:
            if opt.get(key) is not None:
                opt[key] = float(opt[key])
        model = ModelSpec(**merged["model"])
        dist = DistSpec(**{**merged["dist"], "level": float(merged["dist"]["level"])})
        config = ExperimentConfig(
            experiment=experiment,
            model=model,
            dist=dist,
            optimizer=OptimizerConfig(**opt),
            grid=[float(g) for g in merged["grid"]],
            seeds=[int(s) for s in merged["seeds"]],
            output_dir=str(merged["output_dir"]),
            mode=merged["mode"],
            full=bool(merged["full"]),
            plot=bool(merged["plot"]),
            verify=VerifySpec(**merged["verify"]),
        )
        # fail early on an invalid law rather than inside a worker
        dist.build(model.r2)
    except (TypeError, ValueError, InvalidDistributionError) as err:
        raise ConfigurationError(f"Invalid configuration: {err}") from err
    if config.mode == "quadratic" and config.optimizer.measurement_kind != "rank-one":
        raise ConfigurationError("The quadratic mode needs rank-one measurements")
    return config


@optional_typecheck
def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[dict] = None,
    experiment: Optional[str] = None,
) -> ExperimentConfig:
    "config file (optional) overridden by `overrides`, then build_config"
    raw = read_config_file(path) if path is not None else {}
    raw = _deep_merge(_resolve_aliases(raw), _resolve_aliases(overrides or {}))
    return build_config(raw, experiment=experiment)


@optional_typecheck
def write_trajectory_csv(trajectory: Trajectory, path: Union[str, Path]) -> None:
    """One row per recorded step, floats written as their shortest exact
    repr so that reading the file back gives the same values."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for rec in trajectory.records:
                row = rec.as_row()
                writer.writerow(
                    [
                        value if name in ("t", "env_id") else format_float(value)
                        for name, value in row.items()
                    ]
                )
    except OSError as err:
        raise OSError(f"Could not write trajectory to '{path}': {err}") from err


@optional_typecheck
def read_trajectory_csv(path: Union[str, Path]) -> List[MetricRecord]:
    frame = pd.read_csv(
        path, dtype={"env_id": str}, float_precision="round_trip", keep_default_na=False
    )
    if list(frame.columns) != CSV_FIELDS:
        raise ValueError(f"Unexpected trajectory header in '{path}': {list(frame.columns)}")
    return [
        MetricRecord(
            t=int(row.t),
            env_id=str(row.env_id),
            **{name: float(getattr(row, name)) for name in CSV_FIELDS[2:]},
        )
        for row in frame.itertuples(index=False)
    ]


def _write_summary(summary: SweepSummary, out_dir: Path) -> Path:
    path = out_dir / "summary.csv"
    summary.to_frame().to_csv(path, index=False)
    summary.aggregate().to_csv(out_dir / "aggregate.csv", index=False)
    return path


def _write_manifest(
    config: ExperimentConfig,
    out_dir: Path,
    run_id: str,
    started: datetime,
    wall_clock: float,
    cells: Dict[str, str],
) -> Path:
    from .. import __version__

    manifest = {
        "run_id": run_id,
        "config_digest": config.digest(),
        "experiment": config.experiment,
        "mode": config.mode,
        "master_seeds": config.seeds,
        "grid": config.grid,
        "started": started.isoformat(),
        "wall_clock_seconds": round(wall_clock, 3),
        "versions": {
            "hetsense": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "python": platform.python_version(),
        },
        "tooling_defaults": TOOLING_DEFAULTS,
        "config": json.loads(json.dumps(config.as_dict(), default=str)),
        "cells": cells,
    }
    path = out_dir / "manifest.txt"
    path.write_text(rtoml.dumps(_drop_none(manifest), pretty=True))
    return path


def _drop_none(obj: Any) -> Any:
    "toml has no null"
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_drop_none(v) for v in obj]
    return obj


@optional_typecheck
def run_experiment(config: ExperimentConfig) -> int:
    """Run every cell of the experiment and write its artifacts:

    * trajectories/<variant>_g<grid>_s<seed>.csv for training experiments
    * summary.csv (one row per cell) and aggregate.csv
    * verify.csv and verify.md for the verification suites
    * manifest.txt (digest, seeds, grid, wall clock, versions, cell flags)
    * summary.svg / trajectory svgs when `plot` is set

    Returns 0, or 2 if a single run diverged. A diverging sweep cell is
    flagged in its row and the sweep continues.
    """
    from .tasks.sweep import build_cells, run_cell
    from .tasks.verify import run_verification

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = str(uuid6.uuid7())
    started = datetime.now(timezone.utc)
    start = time.time()
    whi(f"Experiment {config.experiment} ({config.mode}), run {run_id}, output in {out_dir}")

    if config.experiment.startswith("verify"):
        status, cells = run_verification(config, out_dir)
        _write_manifest(config, out_dir, run_id, started, time.time() - start, cells)
        return status

    cells = build_cells(config)
    n_jobs = 1 if len(cells) == 1 else HETSENSE_N_JOBS
    results = Parallel(
        n_jobs=n_jobs,
        backend=HETSENSE_PARALLEL_BACKEND,
        verbose=0 if not is_verbose else 51,
    )(
        delayed(run_cell)(config, cell, str(out_dir))
        for cell in tqdm(cells, desc="Cells", unit="cell", disable=is_piped)
    )
    results = sorted(results, key=lambda r: (r.row["grid_value"], r.row["variant"], r.row["seed"]))
    summary = SweepSummary(rows=[r.row for r in results])
    summary_path = _write_summary(summary, out_dir)
    flags = {r.key: r.status for r in results}
    _write_manifest(config, out_dir, run_id, started, time.time() - start, flags)

    for r in results:
        if r.status != "ok":
            yel(f"Cell {r.key}: {r.status} ({r.message})")
    if config.plot:
        from .plotting import plot_summary, plot_trajectory

        try:
            plot_summary(summary_path, out_dir / "summary.svg")
            for r in results:
                if r.row["trajectory_file"]:
                    csv_path = out_dir / r.row["trajectory_file"]
                    plot_trajectory(csv_path, csv_path.with_suffix(".svg"))
        except Exception as err:
            red(f"Could not plot the results: {err}")

    md_printer(_summary_markdown(summary))
    logger.info(f"Experiment {run_id} done in {time.time() - start:.1f}s")
    if config.experiment == "single-run" and any(r.status == "diverged" for r in results):
        return 2
    return 0


def _summary_markdown(summary: SweepSummary) -> str:
    agg = summary.aggregate()
    lines = [
        "| grid value | variant | mean final recovery error | mean final q_fro | runs | diverged |",
        "|---|---|---|---|---|---|",
    ]
    for row in agg.itertuples(index=False):
        lines.append(
            f"| {row.grid_value:g} | {row.variant} | {row.final_recovery_error_mean:.4f} | "
            f"{row.final_q_fro_mean:.4f} | {row.final_recovery_error_count} | {row.diverged} |"
        )
    return "\n".join(lines)
