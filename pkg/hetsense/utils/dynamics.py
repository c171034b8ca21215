"""
Analysis of SGD trajectories.

The factor U_t is split into an invariant part R_t = U_t^T U*, a spurious
part Q_t = U_t^T V* and an error part E_t = U_t - U* R_t^T - V* Q_t^T.
The deterministic sequences (cr, its upper and lower bars, the calibration
line) and the stochastic controller process give the envelopes the
trajectory is checked against.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.linalg
from beartype.typing import Dict, List, Literal, Optional, Sequence, Tuple

from .errors import BoundaryNotFoundError, DimensionError, DomainViolationError
from .logger import logger, yel
from .misc import make_rng
from .rip import rip_error_operator
from .sensing import EnvironmentDistribution, GroundTruthModel, MeasurementBatch, spectral_norm
from .typechecker import optional_typecheck

# bounds of the error level g used for t2, the upper one is where the
# local convergence argument starts to apply
PHASE_G_CAP = 0.01
PHASE_G_FLOOR = 1e-8

# order of the trajectory CSV columns
CSV_FIELDS = [
    "t",
    "env_id",
    "loss",
    "sigma1_r",
    "sigma_min_r",
    "q_fro",
    "e_op",
    "e_fro2",
    "recovery_error",
]


@dataclass(frozen=True)
class MetricRecord:
    t: int
    env_id: str
    loss: float
    sigma1_r: float
    sigma_min_r: float
    q_fro: float
    e_op: float
    e_fro2: float
    recovery_error: float

    def as_row(self) -> dict:
        return {name: getattr(self, name) for name in CSV_FIELDS}


@dataclass(frozen=True, eq=False)
class Decomposition:
    r_mat: np.ndarray
    q_mat: np.ndarray
    e_mat: np.ndarray

    def recompose(self, model: GroundTruthModel) -> np.ndarray:
        "U* R^T + V* Q^T + E"
        return (
            model.u_star.columns @ self.r_mat.T
            + model.v_star.columns @ self.q_mat.T
            + self.e_mat
        )


@dataclass(frozen=True)
class EnvelopeReport:
    holds: bool
    ordered: bool
    max_upper_ratio: float
    min_lower_ratio: float


@dataclass(frozen=True)
class AuxiliarySequences:
    cr: List[float]
    cr_upper: List[float]
    cr_lower: List[float]
    cal_line: List[float]
    t1: int
    t2: int
    envelope: EnvelopeReport


@dataclass(frozen=True, eq=False)
class ControllerProcess:
    """paths has shape (replicates, r2, steps + 1). A path is frozen after
    its first crossing of absorb_level_factor * L_t."""

    paths: np.ndarray
    absorbed: np.ndarray
    absorb_level_factor: float
    p: float


@dataclass(frozen=True)
class SupermartingaleReport:
    expectation: float
    stderr: float
    passed: bool
    method: str
    support: Tuple[float, float]


@dataclass(frozen=True, eq=False)
class ControllerReport:
    process: ControllerProcess
    absorbed_fraction: float
    bound: float
    within_bound: bool
    supermartingale: Optional[SupermartingaleReport]
    warning: Optional[str] = None


@dataclass(frozen=True)
class PhaseTolerances:
    absolute: float = 1e-9
    near_one: float = 0.1
    p: float = 0.1


@dataclass(frozen=True)
class PhaseReport:
    growth_sigma1: List[bool] = field(default_factory=list)
    growth_sigma_min: List[bool] = field(default_factory=list)
    envelope: List[bool] = field(default_factory=list)
    q_bound: List[bool] = field(default_factory=list)
    t1_window: Optional[bool] = None
    t2_near_one: Optional[bool] = None
    pass_fractions: Dict[str, float] = field(default_factory=dict)


def _check_factor(u: np.ndarray, model: GroundTruthModel) -> None:
    if u.ndim != 2 or u.shape[0] != model.d:
        raise DimensionError(
            f"Factor of shape {u.shape} does not match the model dimension {model.d}"
        )


@optional_typecheck
def decompose(u: np.ndarray, model: GroundTruthModel) -> Decomposition:
    "R = U^T U*, Q = U^T V*, E = U - U* R^T - V* Q^T"
    _check_factor(u, model)
    u_star = model.u_star.columns
    v_star = model.v_star.columns
    r_mat = u.T @ u_star
    q_mat = u.T @ v_star
    e_mat = u - u_star @ r_mat.T - v_star @ q_mat.T
    return Decomposition(r_mat=r_mat, q_mat=q_mat, e_mat=e_mat)


@optional_typecheck
def recovery_error(u: np.ndarray, model: GroundTruthModel) -> float:
    """||U U^T - X*||_F. For k < d the d x d product is avoided:
    ||U U^T - U* U*^T||_F^2 = ||U^T U||_F^2 - 2 ||U^T U*||_F^2 + r1."""
    _check_factor(u, model)
    if u.shape[1] >= model.d:
        return float(np.linalg.norm(u @ u.T - model.x_star))
    gram = u.T @ u
    cross = u.T @ model.u_star.columns
    value = np.sum(gram * gram) - 2 * np.sum(cross * cross) + model.r1
    return float(math.sqrt(max(value, 0.0)))


@optional_typecheck
def metric_record(
    t: int, u: np.ndarray, model: GroundTruthModel, env_id: str, loss: float
) -> MetricRecord:
    dec = decompose(u, model)
    svals = scipy.linalg.svdvals(dec.r_mat)
    sigma_min = float(svals[-1]) if len(svals) == model.r1 else 0.0
    return MetricRecord(
        t=t,
        env_id=env_id,
        loss=float(loss),
        sigma1_r=float(svals[0]),
        sigma_min_r=sigma_min,
        q_fro=float(np.linalg.norm(dec.q_mat)),
        e_op=spectral_norm(dec.e_mat),
        e_fro2=float(np.sum(dec.e_mat * dec.e_mat)),
        recovery_error=recovery_error(u, model),
    )


@optional_typecheck
def error_level(u: np.ndarray, model: GroundTruthModel) -> float:
    "g = ||Q||_F^2 + ||E||_F^2 + 4 ||U^T E||_2, the error level that sets t2"
    dec = decompose(u, model)
    return float(
        np.sum(dec.q_mat * dec.q_mat)
        + np.sum(dec.e_mat * dec.e_mat)
        + 4 * spectral_norm(u.T @ dec.e_mat)
    )


@optional_typecheck
def trajectory_g_target(
    trajectory: "hetsense.utils.optimizer.Trajectory", model: GroundTruthModel
) -> float:
    """g_target of phase_boundaries for a finished run: the error level of
    its last iterate, clipped to [PHASE_G_FLOOR, PHASE_G_CAP]."""
    g = error_level(np.asarray(trajectory.final_state.u), model)
    clipped = min(max(g, PHASE_G_FLOOR), PHASE_G_CAP)
    if clipped != g:
        logger.debug(f"Error level {g:.4g} of the last iterate clipped to {clipped:.4g}")
    return clipped


@optional_typecheck
def decomposition_residuals(u: np.ndarray, model: GroundTruthModel) -> Dict[str, float]:
    """recomposition: max entry of U - (U* R^T + V* Q^T + E).
    overlap: ||U*^T E||_2 - epsilon1 ||Q||_2, nonpositive up to rounding."""
    dec = decompose(u, model)
    return {
        "recomposition": float(np.max(np.abs(u - dec.recompose(model)))),
        "overlap": spectral_norm(model.u_star.columns.T @ dec.e_mat)
        - model.epsilon1 * spectral_norm(dec.q_mat),
    }


def _relative(lhs: np.ndarray, rhs: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(lhs)), float(np.linalg.norm(rhs)), 1e-300)
    return float(np.linalg.norm(lhs - rhs) / scale)


@optional_typecheck
def dynamics_identity_residuals(
    u_t: np.ndarray,
    u_next: np.ndarray,
    batch: MeasurementBatch,
    sigma_t: np.ndarray,
    model: GroundTruthModel,
    eta: float,
) -> Dict[str, float]:
    """Relative residuals between the parts of U_{t+1} (one plain SGD step
    on `batch`) and their expressions through R_t, Q_t, E_t, Sigma_t and the
    RIP error matrix Err = E_t(U U^T - X* - V* Sigma V*^T):

    update: U_{t+1} = U - eta (U U^T - X* - V* Sigma V*^T) U - eta Err U
    r: R_{t+1} = R + eta R - eta U^T U R + eta Q Sigma V*^T U* - eta U^T Err^T U*
    q: Q_{t+1} = Q + eta Q Sigma - eta U^T U Q + eta R U*^T V* - eta U^T Err^T V*
    e: E_{t+1} = E - eta E U^T U + eta P (U* R^T + V* Sigma Q^T) - eta P Err U
    with P = I - U* U*^T - V* V*^T. Gaussian A_i are not symmetric, hence
    the transposes of Err.
    """
    u_star = model.u_star.columns
    v_star = model.v_star.columns
    spurious = v_star @ sigma_t @ v_star.T
    delta = u_t @ u_t.T - model.x_star - spurious
    err = rip_error_operator(batch, delta)
    cur = decompose(u_t, model)
    nxt = decompose(u_next, model)
    utu = u_t.T @ u_t
    proj = model.residual_projector

    update = u_t - eta * delta @ u_t - eta * err @ u_t
    r_next = (
        cur.r_mat
        + eta * cur.r_mat
        - eta * utu @ cur.r_mat
        + eta * cur.q_mat @ sigma_t @ v_star.T @ u_star
        - eta * u_t.T @ err.T @ u_star
    )
    q_next = (
        cur.q_mat
        + eta * cur.q_mat @ sigma_t
        - eta * utu @ cur.q_mat
        + eta * cur.r_mat @ u_star.T @ v_star
        - eta * u_t.T @ err.T @ v_star
    )
    e_next = (
        cur.e_mat
        - eta * cur.e_mat @ utu
        + eta * proj @ (u_star @ cur.r_mat.T + v_star @ sigma_t @ cur.q_mat.T)
        - eta * proj @ err @ u_t
    )
    return {
        "update": _relative(u_next, update),
        "r": _relative(nxt.r_mat, r_next),
        "q": _relative(nxt.q_mat, q_next),
        "e": _relative(nxt.e_mat, e_next),
    }


@optional_typecheck
def gram_expansion_gap(u: np.ndarray, model: GroundTruthModel) -> Tuple[float, float]:
    "(||U^T U - (R R^T + Q Q^T + E^T E)||_2, 6 epsilon1 ||U||_2^2)"
    dec = decompose(u, model)
    approx = dec.r_mat @ dec.r_mat.T + dec.q_mat @ dec.q_mat.T + dec.e_mat.T @ dec.e_mat
    gap = spectral_norm(u.T @ u - approx)
    return gap, 6 * model.epsilon1 * spectral_norm(u) ** 2


def _check_scalars(alpha: float, eta: float) -> None:
    assert 0 < alpha < 1, f"alpha must be in (0, 1), got {alpha}"
    assert eta > 0, f"eta must be positive, got {eta}"


@optional_typecheck
def cr_sequence(alpha: float, eta: float, steps: int) -> List[float]:
    "R_0 = alpha, R_{t+1} = (1 - eta R_t^2 + eta) R_t, steps + 1 values"
    _check_scalars(alpha, eta)
    out = [alpha]
    for _ in range(steps):
        prev = out[-1]
        out.append((1 - eta * prev**2 + eta) * prev)
    return out


@optional_typecheck
def bar_sequences(
    alpha: float, eta: float, steps: int, correction: float = 1 / 32
) -> Tuple[List[float], List[float]]:
    """Upper and lower companions of cr_sequence. Both follow the same
    recursion, the upper one plus and the lower one minus
    correction * eta / log(1/alpha) times the upper value."""
    _check_scalars(alpha, eta)
    coef = correction * eta / math.log(1 / alpha)
    upper, lower = [alpha], [alpha]
    for _ in range(steps):
        up, low = upper[-1], lower[-1]
        upper.append((1 - eta * up**2 + eta) * up + coef * up)
        lower.append((1 - eta * low**2 + eta) * low - coef * up)
    return upper, lower


@optional_typecheck
def calibration_line(
    alpha: float,
    m1: float,
    delta: float,
    r1: int,
    r2: int,
    cr: Sequence[float],
) -> List[float]:
    "L_t = max(alpha, 40 M1 delta sqrt(r1 + r2) R_t)"
    slope = 40 * m1 * delta * math.sqrt(r1 + r2)
    return [max(alpha, slope * value) for value in cr]


@optional_typecheck
def phase_boundaries(
    cr: Sequence[float], eta: float, g_target: float = PHASE_G_CAP
) -> Tuple[int, int]:
    """t1 is the first index with cr in (1/3 - eta, 1/3), which is 0 as soon
    as eta >= 1/3. t2 = t1 + ceil((8/eta) log(1/g_target)), see
    trajectory_g_target for the g_target of a finished run."""
    assert eta > 0, f"eta must be positive, got {eta}"
    assert 0 < g_target < 1, f"g_target must be in (0, 1), got {g_target}"
    low, high = 1 / 3 - eta, 1 / 3
    for t, value in enumerate(cr):
        if low < value < high:
            return t, t + int(math.ceil(8 / eta * math.log(1 / g_target)))
    raise BoundaryNotFoundError(
        f"The sequence never enters ({low:.4f}, {high:.4f}) within {len(cr)} values"
    )


@optional_typecheck
def bar_envelope_check(
    cr: Sequence[float],
    upper: Sequence[float],
    lower: Sequence[float],
    t1: int,
) -> EnvelopeReport:
    "upper <= (7/6) cr, lower >= (5/6) cr and lower <= cr <= upper on [0, t1]"
    assert len(cr) > t1 and len(upper) > t1 and len(lower) > t1, "Sequences end before t1"
    cr_arr = np.asarray(cr[: t1 + 1])
    up = np.asarray(upper[: t1 + 1])
    low = np.asarray(lower[: t1 + 1])
    max_upper = float(np.max(up / cr_arr))
    min_lower = float(np.min(low / cr_arr))
    ordered = bool(np.all(low <= cr_arr) and np.all(cr_arr <= up))
    return EnvelopeReport(
        holds=max_upper <= 7 / 6 and min_lower >= 5 / 6,
        ordered=ordered,
        max_upper_ratio=max_upper,
        min_lower_ratio=min_lower,
    )


@optional_typecheck
def build_auxiliary_sequences(
    alpha: float,
    eta: float,
    steps: int,
    m1: float,
    delta: float,
    r1: int,
    r2: int,
    g_target: float = PHASE_G_CAP,
    correction: float = 1 / 32,
) -> AuxiliarySequences:
    cr = cr_sequence(alpha, eta, steps)
    upper, lower = bar_sequences(alpha, eta, steps, correction)
    t1, t2 = phase_boundaries(cr, eta, g_target)
    return AuxiliarySequences(
        cr=cr,
        cr_upper=upper,
        cr_lower=lower,
        cal_line=calibration_line(alpha, m1, delta, r1, r2, cr),
        t1=t1,
        t2=t2,
        envelope=bar_envelope_check(cr, upper, lower, t1),
    )


@optional_typecheck
def trajectory_auxiliary_sequences(
    trajectory: "hetsense.utils.optimizer.Trajectory",
    model: GroundTruthModel,
    m1: float,
    delta: float,
) -> AuxiliarySequences:
    "auxiliary sequences of a finished run, t2 from the error level of its last iterate"
    config = trajectory.config
    return build_auxiliary_sequences(
        alpha=config.alpha,
        eta=config.eta,
        steps=trajectory.steps,
        m1=m1,
        delta=delta,
        r1=model.r1,
        r2=model.r2,
        g_target=trajectory_g_target(trajectory, model),
    )


def _moment_two_thirds(values: np.ndarray, probs: np.ndarray) -> float:
    return float(probs @ np.power(values, 2 / 3))


@optional_typecheck
def check_supermartingale(
    dist: EnvironmentDistribution,
    eta: float,
    n_samples: int,
    seed: int,
    method: Literal["exact", "monte-carlo"] = "exact",
) -> SupermartingaleReport:
    """Estimate E[(1 + eta Sigma_ii + 2 eta)^(2/3)], worst coordinate i.

    The exact method sums over the atoms of discrete laws and integrates
    the uniform law with quadrature (stderr 0). Passes iff
    estimate + 3 stderr < 1, so eta = 0 fails.
    """
    assert dist.r2 >= 1, "The controller needs at least one spurious coordinate"
    lo, hi = dist.diagonal_support()
    support = (1 + eta * lo + 2 * eta, 1 + eta * hi + 2 * eta)
    if min(support) <= 0:
        raise DomainViolationError(
            f"1 + eta Sigma_ii + 2 eta takes values in [{min(support):.4g}, "
            f"{max(support):.4g}], the 2/3 power is undefined"
        )

    if method == "monte-carlo":
        sigmas = dist.draw_sigmas(make_rng(seed), n_samples)
        values = np.power(1 + eta * np.diagonal(sigmas, axis1=1, axis2=2) + 2 * eta, 2 / 3)
        means = values.mean(axis=0)
        worst = int(np.argmax(means))
        expectation = float(means[worst])
        stderr = float(values[:, worst].std(ddof=1) / math.sqrt(n_samples))
    else:
        stderr = 0.0
        if dist.kind == "uniform-diagonal":
            if dist.half_width == 0:
                expectation = (1 + 3 * eta) ** (2 / 3)
            else:
                integral, _ = scipy.integrate.quad(
                    lambda s: (1 + eta * s + 2 * eta) ** (2 / 3),
                    1 - dist.half_width,
                    1 + dist.half_width,
                )
                expectation = integral / (2 * dist.half_width)
        else:
            expectation = max(
                _moment_two_thirds(1 + eta * vals + 2 * eta, probs)
                for vals, probs in (dist.diagonal_atoms(i) for i in range(dist.r2))
            )
    return SupermartingaleReport(
        expectation=float(expectation),
        stderr=stderr,
        passed=bool(expectation + 3 * stderr < 1),
        method=method,
        support=support,
    )


@optional_typecheck
def simulate_controller(
    dist: EnvironmentDistribution,
    eta: float,
    cal_line: Sequence[float],
    p: float,
    r2: int,
    steps: int,
    seed: int,
    replicates: int,
    alpha: float,
    check: bool = True,
) -> ControllerReport:
    """Simulate the controller paths q_i^t of `replicates` independent
    environment streams. Each path starts at alpha, moves to
    max((1 + eta Sigma_ii + 2 eta) q, L_{t+1}) with the coefficient drawn
    for step t+1, and stays frozen once it reaches p^-1.5 r2^1.5 L_t.

    The fraction of replicates with an absorbed path is compared with
    steps * p. When the supermartingale check fails (or cannot be run) a
    warning is attached to the report instead of raising.
    """
    assert 0 < p < 1, f"p must be in (0, 1), got {p}"
    assert replicates >= 1, f"Need at least one replicate, got {replicates}"
    assert alpha > 0, f"alpha must be positive, got {alpha}"
    assert len(cal_line) >= steps + 1, "The calibration line is shorter than steps + 1"
    assert dist.r2 == r2, f"Distribution has r2={dist.r2}, expected {r2}"

    warning = None
    report = None
    if check:
        try:
            report = check_supermartingale(dist, eta, 1000, seed)
            if not report.passed:
                warning = (
                    f"eta={eta} is outside the supermartingale window "
                    f"(E = {report.expectation:.8f})"
                )
        except DomainViolationError as err:
            warning = str(err)
        if warning:
            yel(f"Controller: {warning}")

    lines = np.asarray(cal_line[: steps + 1], dtype=float)
    factor = p**-1.5 * r2**1.5
    diag = np.empty((replicates, steps, r2))
    for j in range(replicates):
        sigmas = dist.draw_sigmas(make_rng(seed, j), steps)
        diag[j] = np.diagonal(sigmas, axis1=1, axis2=2)

    paths = np.empty((replicates, r2, steps + 1))
    q = np.full((replicates, r2), float(alpha))
    absorbed = q >= factor * lines[0]
    paths[:, :, 0] = q
    for t in range(steps):
        moved = np.maximum((1 + eta * diag[:, t, :] + 2 * eta) * q, lines[t + 1])
        q = np.where(absorbed, q, moved)
        absorbed = absorbed | (q >= factor * lines[t + 1])
        paths[:, :, t + 1] = q

    fraction = float(np.mean(np.any(absorbed, axis=1)))
    bound = steps * p
    logger.debug(
        f"Controller: {replicates} replicates, absorbed fraction {fraction:.4f}, bound {bound}"
    )
    return ControllerReport(
        process=ControllerProcess(
            paths=paths, absorbed=absorbed, absorb_level_factor=factor, p=p
        ),
        absorbed_fraction=fraction,
        bound=bound,
        within_bound=fraction <= bound,
        supermartingale=report,
        warning=warning,
    )


def _fraction(flags: List[bool]) -> Optional[float]:
    return sum(flags) / len(flags) if flags else None


@optional_typecheck
def check_phase_predicates(
    trajectory: "hetsense.utils.optimizer.Trajectory",
    aux: AuxiliarySequences,
    model: GroundTruthModel,
    tolerances: Optional[PhaseTolerances] = None,
) -> PhaseReport:
    """Diagnostics of a trajectory against the auxiliary sequences:

    * growth: sigma(R_{t+1}) > (1 + eta/3) sigma(R_t) for t < t1
    * envelope: lower_t <= sigma_min(R_t) <= sigma_1(R_t) <= upper_t for t <= t1
    * q_bound: ||Q_t||_F <= p^-1.5 r2^2 L_t for every step
    * t1_window: both singular values of R_{t1} in (1/4, 7/18)
    * t2_near_one: both singular values of R_{t2} within `near_one` of 1

    Nothing is raised, the report carries flags and pass fractions.
    """
    tol = tolerances or PhaseTolerances()
    records = trajectory.records
    steps = len(records) - 1
    if steps < 1:
        return PhaseReport()
    eta = trajectory.config.eta
    s1 = [rec.sigma1_r for rec in records]
    smin = [rec.sigma_min_r for rec in records]
    end1 = min(aux.t1, steps)

    growth1 = [s1[t + 1] > (1 + eta / 3) * s1[t] - tol.absolute for t in range(end1)]
    growth_min = [smin[t + 1] > (1 + eta / 3) * smin[t] - tol.absolute for t in range(end1)]
    envelope = [
        aux.cr_lower[t] - tol.absolute <= smin[t]
        and smin[t] <= s1[t] + tol.absolute
        and s1[t] <= aux.cr_upper[t] + tol.absolute
        for t in range(min(end1 + 1, len(aux.cr_upper)))
    ]
    q_factor = tol.p**-1.5 * model.r2**2
    q_bound = [
        records[t].q_fro <= q_factor * aux.cal_line[t] + tol.absolute
        for t in range(min(steps + 1, len(aux.cal_line)))
    ]
    t1_window = None
    if aux.t1 <= steps:
        t1_window = all(1 / 4 < v < 7 / 18 for v in (s1[aux.t1], smin[aux.t1]))
    t2_near_one = None
    if aux.t2 <= steps:
        t2_near_one = all(abs(v - 1) <= tol.near_one for v in (s1[aux.t2], smin[aux.t2]))

    fractions = {
        name: frac
        for name, frac in [
            ("growth_sigma1", _fraction(growth1)),
            ("growth_sigma_min", _fraction(growth_min)),
            ("envelope", _fraction(envelope)),
            ("q_bound", _fraction(q_bound)),
        ]
        if frac is not None
    }
    return PhaseReport(
        growth_sigma1=growth1,
        growth_sigma_min=growth_min,
        envelope=envelope,
        q_bound=q_bound,
        t1_window=t1_window,
        t2_near_one=t2_near_one,
        pass_fractions=fractions,
    )
