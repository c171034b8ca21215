"""
Training procedures on the factor U (fitted matrix U U^T):

* heterogeneous-batch SGD: every step draws one environment and a fresh
  batch from it, then takes one gradient step on the least squares loss.
* pooled gradient descent: full-batch descent on one dataset mixing all
  environments.
* quadratic-network SGD: the rank-one variant with truncated gradients and
  a shrinkage rescaling after every step.

Every random draw comes from a named sub-stream of the master seed, so a
(config, seed) pair always yields the same trajectory.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
from beartype.typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple
from tqdm import tqdm

from .dynamics import MetricRecord, metric_record
from .env import (
    HETSENSE_DIVERGENCE_FACTOR,
    HETSENSE_STEPS_CONSTANT,
)
from .errors import ConfigurationError, DimensionError, DivergenceError, DomainViolationError
from .flags import is_piped, is_verbose
from .logger import logger, yel
from .misc import array_digest, config_digest, derive_seed, pairwise_sum
from .rip import estimate_rip_delta
from .sensing import (
    EnvironmentCoefficients,
    EnvironmentDistribution,
    GroundTruthModel,
    MeasurementBatch,
    generate_batch,
    generate_pooled_batch,
    sample_environment,
    spectral_norm,
)
from .typechecker import optional_typecheck

# the truncated rank-one gradient is only controlled for delta <= DELTA_CAP
DELTA_CAP = 0.01
CALIBRATION_TRIALS = 20


@dataclass(frozen=True)
class TruncationConfig:
    """log-inv-delta uses R = radius_scale * log(1/delta). At the default
    scale of 1 the radius sits below the typical prediction ||U^T x||^2 of
    a rank 2 iterate often enough to bias the trace term of the gradient,
    the quadratic runner raises the scale."""

    enabled: bool = True
    radius_mode: Literal["log-inv-delta", "fixed"] = "log-inv-delta"
    radius: Optional[float] = None
    radius_scale: float = 1.0

    def __post_init__(self):
        if self.radius_mode == "fixed" and (self.radius is None or self.radius <= 0):
            raise ConfigurationError("A fixed truncation radius needs a positive `radius`")
        if self.radius_scale <= 0:
            raise ConfigurationError(
                f"radius_scale must be positive, got {self.radius_scale}"
            )


@dataclass(frozen=True)
class ShrinkageConfig:
    enabled: bool = True
    tau_mode: Literal[
        "oracle",
        "oracle-trace",
        "frobenius-moment-estimate",
        "trace-moment-estimate",
    ] = "oracle"


@dataclass(frozen=True)
class OptimizerConfig:
    """
    eta: step size. 0 is accepted (constant trajectories) but then `steps`
        must be given.
    alpha: initialization scale.
    steps: number of updates T, defaults to ceil(C log(1/alpha) / eta).
    batch_size: measurements per step (the size of the pooled dataset for
        pooled gradient descent).
    parameterization: "overparam-d" starts from alpha I_d, "exact" from a
        d x (r1 + r2) gaussian matrix.
    divergence_threshold: bound on ||U||_2, defaults to
        factor * sqrt(r1 (1 + M1)).
    """

    eta: float
    alpha: float
    batch_size: int
    steps: Optional[int] = None
    parameterization: Literal["overparam-d", "exact"] = "overparam-d"
    measurement_kind: Literal["gaussian", "rank-one"] = "gaussian"
    truncation: Optional[TruncationConfig] = None
    shrinkage: Optional[ShrinkageConfig] = None
    divergence_threshold: Optional[float] = None

    def __post_init__(self):
        if not self.eta >= 0:
            raise ConfigurationError(f"eta must be nonnegative, got {self.eta}")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.steps is not None and self.steps < 0:
            raise ConfigurationError(f"steps must be nonnegative, got {self.steps}")
        if self.eta == 0 and self.steps is None:
            raise ConfigurationError("With eta = 0 the number of steps must be given")
        if self.measurement_kind != "rank-one" and (
            self.truncation_enabled or self.shrinkage_enabled
        ):
            raise ConfigurationError(
                "Truncation and shrinkage are only defined for rank-one measurements"
            )
        if self.divergence_threshold is not None and not self.divergence_threshold > 0:
            raise ConfigurationError("divergence_threshold must be positive")

    @property
    def truncation_enabled(self) -> bool:
        return self.truncation is not None and self.truncation.enabled

    @property
    def shrinkage_enabled(self) -> bool:
        return self.shrinkage is not None and self.shrinkage.enabled

    def resolved_steps(self) -> int:
        if self.steps is not None:
            return self.steps
        return default_steps(self.alpha, self.eta)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class IterateState:
    "U_t; rng_cursor is the index of the next batch of the data stream"

    u: np.ndarray
    step: int
    rng_cursor: int

    def __post_init__(self):
        u = np.array(self.u, dtype=float, copy=True)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)


@dataclass(frozen=True, eq=False)
class Trajectory:
    records: Tuple[MetricRecord, ...]
    final_state: IterateState
    config_digest: str
    config: OptimizerConfig
    metadata: Dict = dataclasses.field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.records) - 1


@optional_typecheck
def default_steps(alpha: float, eta: float, constant: Optional[float] = None) -> int:
    "T = ceil(C log(1/alpha) / eta)"
    assert eta > 0, f"Default number of steps needs eta > 0, got {eta}"
    assert 0 < alpha < 1, f"Default number of steps needs 0 < alpha < 1, got {alpha}"
    constant = HETSENSE_STEPS_CONSTANT if constant is None else constant
    return int(math.ceil(constant * math.log(1 / alpha) / eta))


@optional_typecheck
def divergence_threshold(r1: int, m1: float, factor: Optional[float] = None) -> float:
    "an order of magnitude above the largest stationary scale sqrt(r1 (1 + M1))"
    factor = HETSENSE_DIVERGENCE_FACTOR if factor is None else factor
    return float(factor * math.sqrt(r1 * (1 + m1)))


@optional_typecheck
def init_iterate(
    config: OptimizerConfig, model: GroundTruthModel, seed: int = 0
) -> IterateState:
    "alpha I_d, or a d x (r1 + r2) matrix with i.i.d. N(0, alpha^2 / sqrt(d)) entries"
    d = model.d
    if config.parameterization == "overparam-d":
        u = config.alpha * np.eye(d)
    else:
        k = model.r1 + model.r2
        rng = np.random.default_rng(derive_seed(seed, "init"))
        u = rng.normal(0.0, config.alpha / d**0.25, size=(d, k))
    return IterateState(u=u, step=0, rng_cursor=0)


def _check_factor(batch: MeasurementBatch, u: np.ndarray) -> None:
    if u.ndim != 2 or u.shape[0] != batch.d:
        raise DimensionError(
            f"Factor of shape {u.shape} does not match the batch dimension {batch.d}"
        )


def _residual_pass(
    batch: MeasurementBatch,
    u: np.ndarray,
    truncation_radius: Optional[float],
    with_gradient: bool,
) -> Tuple[float, Optional[np.ndarray]]:
    """One pass over the chunks computing the loss and, optionally,
    (1/m) sum_i r_i A_i U with r_i = <A_i, U U^T> - y_i. Samples whose
    prediction exceeds the truncation radius are dropped."""
    _check_factor(batch, u)
    uu = u @ u.T if batch.kind == "gaussian" else None
    loss_parts: List[float] = []
    grad_parts: List[np.ndarray] = []
    for start, stop, block in batch.chunks():
        if batch.kind == "rank-one":
            proj = block @ u
            pred = np.einsum("ij,ij->i", proj, proj)
        else:
            pred = block @ uu.reshape(-1)
        resid = pred - batch.chunk_responses(start, stop, block)
        if truncation_radius is not None:
            resid = np.where(pred <= truncation_radius, resid, 0.0)
        loss_parts.append(float(resid @ resid))
        if not with_gradient:
            continue
        if batch.kind == "rank-one":
            grad_parts.append(block.T @ (resid[:, None] * proj))
        else:
            grad_parts.append((resid @ block).reshape(batch.d, batch.d) @ u)
    loss = float(pairwise_sum(loss_parts) / (2 * batch.m))
    grad = pairwise_sum(grad_parts) / batch.m if with_gradient else None
    return loss, grad


@optional_typecheck
def least_squares_loss(
    batch: MeasurementBatch,
    u: np.ndarray,
    truncation_radius: Optional[float] = None,
) -> float:
    "(1/2m) sum_i (y_i - <A_i, U U^T>)^2"
    return _residual_pass(batch, u, truncation_radius, with_gradient=False)[0]


@optional_typecheck
def loss_gradient(
    batch: MeasurementBatch,
    u: np.ndarray,
    truncation_radius: Optional[float] = None,
) -> np.ndarray:
    """(1/m) sum_i (<A_i, U U^T> - y_i) A_i U, with the indicator
    1{||U^T x_i||^2 <= R} when a truncation radius is given.

    Gaussian A_i are not symmetric: the derivative of least_squares_loss is
    this plus the same expression on the transposed batch. For rank-one
    measurements it is twice this value."""
    return _residual_pass(batch, u, truncation_radius, with_gradient=True)[1]


@optional_typecheck
def loss_and_gradient(
    batch: MeasurementBatch,
    u: np.ndarray,
    truncation_radius: Optional[float] = None,
) -> Tuple[float, np.ndarray]:
    return _residual_pass(batch, u, truncation_radius, with_gradient=True)


def _guard(u: np.ndarray, step: int, threshold: Optional[float]) -> None:
    if not np.all(np.isfinite(u)):
        raise DivergenceError(f"Non finite iterate at step {step}")
    if threshold is None:
        return
    # ||U||_2 <= ||U||_F, the svd is only needed close to the threshold
    if np.linalg.norm(u) > threshold and spectral_norm(u) > threshold:
        raise DivergenceError(
            f"||U||_2 = {spectral_norm(u):.4g} exceeds the divergence threshold "
            f"{threshold:.4g} at step {step}"
        )


@optional_typecheck
def shrinkage_factor(u: np.ndarray, eta: float, tau: float) -> float:
    "1 / (1 - eta (||U||_F^2 - tau))"
    denominator = 1.0 - eta * (float(np.sum(u * u)) - tau)
    if not denominator > 0:
        raise DivergenceError(
            f"Shrinkage denominator {denominator:.4g} is not positive"
        )
    return 1.0 / denominator


def _advance(
    state: IterateState,
    grad: np.ndarray,
    eta: float,
    threshold: Optional[float],
    tau: Optional[float] = None,
) -> IterateState:
    u = state.u - eta * grad
    if tau is not None:
        u = u * shrinkage_factor(state.u, eta, tau)
    _guard(u, state.step + 1, threshold)
    return IterateState(u=u, step=state.step + 1, rng_cursor=state.rng_cursor + 1)


@optional_typecheck
def sgd_step(
    state: IterateState,
    batch: MeasurementBatch,
    eta: float,
    *,
    divergence_threshold: Optional[float] = None,
    truncation_radius: Optional[float] = None,
    tau: Optional[float] = None,
) -> IterateState:
    """U_{t+1} = U_t - eta (1/m) sum_i (<A_i, U_t U_t^T> - y_i) A_i U_t,
    followed by the shrinkage rescaling when `tau` is given.

    Raises DivergenceError if the new iterate is not finite or if its
    operator norm exceeds `divergence_threshold`."""
    _guard(state.u, state.step, None)
    grad = loss_gradient(batch, state.u, truncation_radius)
    return _advance(state, grad, eta, divergence_threshold, tau)


@optional_typecheck
def shrinkage_tau(
    mode: str, batch: MeasurementBatch, target: Optional[np.ndarray] = None
) -> float:
    """tau of the shrinkage step.

    oracle: ||X* + X^(e)||_2.
    oracle-trace: tr(X* + X^(e)), the trace term rank-one measurements add
        to the expected gradient. Only this choice cancels that term, with
        the operator norm the iterate shrinks to 0.
    frobenius-moment-estimate: sqrt(sum y^2 / (3m)).
    trace-moment-estimate: mean of y, since E <x x^T, X> = tr(X).
    """
    if mode in ("oracle", "oracle-trace"):
        assert target is not None, "Oracle tau needs the ground truth target"
        if mode == "oracle-trace":
            return float(np.trace(target))
        return spectral_norm(target)
    y = batch.responses
    if mode == "frobenius-moment-estimate":
        return float(np.sqrt(y @ y / (3 * batch.m)))
    if mode == "trace-moment-estimate":
        return float(np.mean(y))
    raise ConfigurationError(f"Unknown tau mode '{mode}'")


@optional_typecheck
def resolve_truncation_radius(
    config: OptimizerConfig,
    model: GroundTruthModel,
    env: EnvironmentCoefficients,
    seed: int,
) -> Tuple[Optional[float], Optional[float]]:
    """(radius, delta_hat). log-inv-delta uses R = scale * log(1/delta) with
    delta the smaller of DELTA_CAP and the RIP estimate of a calibration
    batch at rank 2 (r1 + r2). The estimate rarely falls below DELTA_CAP at
    the batch sizes of the experiments, in which case R = scale * log(100)
    and a warning says so."""
    if not config.truncation_enabled:
        return None, None
    if config.truncation.radius_mode == "fixed":
        return float(config.truncation.radius), None
    batch = generate_batch(
        model,
        env,
        config.batch_size,
        derive_seed(seed, "calibration"),
        config.measurement_kind,
    )
    estimate = estimate_rip_delta(
        batch,
        r=2 * (model.r1 + model.r2),
        trials=CALIBRATION_TRIALS,
        seed=derive_seed(seed, "calibration-trials"),
    )
    delta = min(estimate.delta_hat, DELTA_CAP)
    radius = config.truncation.radius_scale * math.log(1 / delta)
    if estimate.delta_hat > DELTA_CAP:
        yel(
            f"Truncation: delta_hat={estimate.delta_hat:.4g} is above the cap "
            f"{DELTA_CAP}, using R = {config.truncation.radius_scale} * log(1/{DELTA_CAP}) "
            f"= {radius:.4g}"
        )
    else:
        logger.debug(f"Truncation: delta_hat={estimate.delta_hat:.4g}, R = {radius:.4g}")
    return float(radius), estimate.delta_hat


def _delta_cap(config: OptimizerConfig) -> Optional[float]:
    "cap on delta_hat used for the radius, None when the radius is not derived from it"
    if config.truncation_enabled and config.truncation.radius_mode == "log-inv-delta":
        return DELTA_CAP
    return None


def _diagonal_expectation(dist: EnvironmentDistribution, f: Callable[[float], float]) -> float:
    "sum over i of E f(Sigma_ii)"
    if dist.r2 == 0:
        return 0.0
    if dist.kind == "uniform-diagonal":
        lo, hi = dist.diagonal_support()
        if hi == lo:
            return dist.r2 * f(lo)
        integral, _ = scipy.integrate.quad(f, lo, hi)
        return dist.r2 * integral / (hi - lo)
    total = 0.0
    for i in range(dist.r2):
        vals, probs = dist.diagonal_atoms(i)
        total += float(sum(p * f(v) for v, p in zip(vals, probs)))
    return total


@optional_typecheck
def predicted_error_floor(
    config: OptimizerConfig, d: int, dist: EnvironmentDistribution
) -> float:
    """Stationary ||U U^T - X*||_F of heterogeneous SGD once the spurious
    part is gone. The residual of the unlearned X^(e) = V* Sigma V*^T keeps
    kicking the iterate and the step pulls it back:

    gaussian: sqrt(2 eta d E[sum_i s_i^2] / (m (2 - eta)))
    rank-one: sqrt(2 k / (1 - (1 - 2 eta)^2)) with
        k = 3 eta^2 d E[sum_i s_i^2 / (1 + eta s_i)^2] / m

    The runs cannot beat this level whatever the number of steps, so
    accuracy targets must pick d / m small enough.
    """
    eta, m = config.eta, config.batch_size
    assert 0 < eta < 1 / 2, f"The floor needs 0 < eta < 1/2, got {eta}"
    if config.measurement_kind == "gaussian":
        second = _diagonal_expectation(dist, lambda s: s * s)
        return float(math.sqrt(2 * eta * d * second / (m * (2 - eta))))
    lo, _ = dist.diagonal_support()
    if 1 + eta * lo <= 0:
        raise DomainViolationError(
            f"1 + eta Sigma_ii reaches {1 + eta * lo:.4g}, the rank-one floor is undefined"
        )
    damped = _diagonal_expectation(dist, lambda s: s * s / (1 + eta * s) ** 2)
    kick = 3 * eta**2 * d * damped / m
    return float(math.sqrt(2 * kick / (1 - (1 - 2 * eta) ** 2)))


def _model_digest(model: GroundTruthModel) -> str:
    return array_digest(np.hstack([model.u_star.columns, model.v_star.columns]))


def _run_stream(
    runner: str,
    model: GroundTruthModel,
    config: OptimizerConfig,
    seed: int,
    draw: Callable[[int], Tuple[MeasurementBatch, Optional[np.ndarray]]],
    threshold: float,
    truncation_radius: Optional[float],
    metadata: Dict,
) -> Trajectory:
    """Common loop of the runners. draw(t) returns the batch of step t and
    the target X* + X^(e_t) it observes (None for pooled data). Row t is
    computed on batch t and U_t, the row of step T uses a batch that is
    drawn but not applied."""
    steps = config.resolved_steps()
    metadata = {
        **metadata,
        "runner": runner,
        "seed": seed,
        "steps": steps,
        "divergence_threshold": threshold,
        "truncation_radius": truncation_radius,
    }
    digest = config_digest(
        {"config": config.as_dict(), "model": _model_digest(model), **metadata}
    )
    state = init_iterate(config, model, seed)
    _guard(state.u, 0, threshold)
    records: List[MetricRecord] = []
    tau_mode = config.shrinkage.tau_mode if config.shrinkage_enabled else None

    logger.debug(
        f"Starting {runner} run: steps={steps} eta={config.eta} alpha={config.alpha} "
        f"m={config.batch_size} seed={seed}"
    )
    for t in tqdm(
        range(steps + 1),
        desc=runner,
        unit="step",
        disable=is_piped or not is_verbose,
        leave=False,
    ):
        batch, target = draw(t)
        if t == steps:
            loss = least_squares_loss(batch, state.u, truncation_radius)
            records.append(metric_record(t, state.u, model, batch.env_id, loss))
            break
        loss, grad = loss_and_gradient(batch, state.u, truncation_radius)
        records.append(metric_record(t, state.u, model, batch.env_id, loss))
        tau = None if tau_mode is None else shrinkage_tau(tau_mode, batch, target)
        try:
            state = _advance(state, grad, config.eta, threshold, tau)
        except DivergenceError as err:
            partial = Trajectory(
                records=tuple(records),
                final_state=state,
                config_digest=digest,
                config=config,
                metadata={**metadata, "diverged_at": t + 1},
            )
            raise DivergenceError(f"{runner}: {err}", trajectory=partial) from err

    return Trajectory(
        records=tuple(records),
        final_state=state,
        config_digest=digest,
        config=config,
        metadata=metadata,
    )


def _stream_draw(
    model: GroundTruthModel,
    dist: EnvironmentDistribution,
    config: OptimizerConfig,
    seed: int,
) -> Callable[[int], Tuple[MeasurementBatch, np.ndarray]]:
    def draw(t: int) -> Tuple[MeasurementBatch, np.ndarray]:
        env = sample_environment(dist, derive_seed(seed, "environment", t))
        batch = generate_batch(
            model,
            env,
            config.batch_size,
            derive_seed(seed, "batch", t),
            config.measurement_kind,
        )
        return batch, batch.targets[0]

    return draw


def _threshold(config: OptimizerConfig, r1: int, m1: float) -> float:
    if config.divergence_threshold is not None:
        return config.divergence_threshold
    return divergence_threshold(r1, m1)


@optional_typecheck
def run_hetero_sgd(
    model: GroundTruthModel,
    dist: EnvironmentDistribution,
    config: OptimizerConfig,
    seed: int,
) -> Trajectory:
    """Heterogeneous-batch SGD: at every step draw e_t from `dist`, a fresh
    batch of `batch_size` measurements from e_t, and take one gradient step
    (followed by the shrinkage step when enabled)."""
    return _run_hetero(model, dist, config, seed, "hetero")


def _run_hetero(
    model: GroundTruthModel,
    dist: EnvironmentDistribution,
    config: OptimizerConfig,
    seed: int,
    runner: str,
) -> Trajectory:
    if dist.r2 != model.r2:
        raise DimensionError(f"Distribution has r2={dist.r2} but the model has r2={model.r2}")
    radius, delta_hat = resolve_truncation_radius(
        config, model, sample_environment(dist, derive_seed(seed, "calibration-env")), seed
    )
    floor = None
    if 0 < config.eta < 1 / 2:
        try:
            floor = predicted_error_floor(config, model.d, dist)
            logger.debug(f"{runner}: predicted error floor {floor:.4g}")
        except DomainViolationError as err:
            logger.debug(f"{runner}: no predicted error floor, {err}")
    return _run_stream(
        runner=runner,
        model=model,
        config=config,
        seed=seed,
        draw=_stream_draw(model, dist, config, seed),
        threshold=_threshold(config, model.r1, dist.sup_diagonal()),
        truncation_radius=radius,
        metadata={
            "delta_hat": delta_hat,
            "delta_cap": _delta_cap(config),
            "predicted_error_floor": floor,
            "distribution": dist.kind,
        },
    )


@optional_typecheck
def run_pooled_gd(
    model: GroundTruthModel,
    envs: Sequence[EnvironmentCoefficients],
    config: OptimizerConfig,
    seed: int,
) -> Trajectory:
    """Full-batch gradient descent on one pooled dataset of `batch_size`
    measurements, each from an environment of `envs` chosen uniformly. The
    same dataset is used at every step."""
    if not envs:
        raise ConfigurationError("Pooled gradient descent needs at least one environment")
    if config.shrinkage_enabled:
        raise ConfigurationError("Shrinkage needs a single environment per batch")
    pooled = generate_pooled_batch(
        model,
        envs,
        config.batch_size,
        derive_seed(seed, "pooled"),
        kind=config.measurement_kind,
    )
    radius, delta_hat = resolve_truncation_radius(config, model, envs[0], seed)
    m1 = max(
        (float(np.max(np.abs(np.diag(env.sigma)))) if env.r2 else 0.0 for env in envs)
    )
    return _run_stream(
        runner="pooled",
        model=model,
        config=config,
        seed=seed,
        draw=lambda t: (pooled, None),
        threshold=_threshold(config, model.r1, m1),
        truncation_radius=radius,
        metadata={
            "delta_hat": delta_hat,
            "delta_cap": _delta_cap(config),
            "n_environments": len(envs),
        },
    )


@optional_typecheck
def run_quadratic_sgd(
    model: GroundTruthModel,
    dist: EnvironmentDistribution,
    config: OptimizerConfig,
    seed: int,
) -> Trajectory:
    """Quadratic-network variant: predictions 1^T q(U x) = ||U^T x||^2 on
    rank-one measurements, truncated gradient and shrinkage step."""
    if config.measurement_kind != "rank-one":
        raise ConfigurationError("The quadratic algorithm needs rank-one measurements")
    if not config.truncation_enabled:
        raise ConfigurationError("The quadratic algorithm needs truncation enabled")
    if not config.shrinkage_enabled:
        raise ConfigurationError("The quadratic algorithm needs shrinkage enabled")
    return _run_hetero(model, dist, config, seed, "quadratic")
