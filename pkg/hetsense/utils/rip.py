"""
Empirical restricted isometry checks on measurement batches.

E(M) = (1/m) sum_i <A_i, M> A_i - M is the RIP error operator. The true
isometry constant over all rank r matrices cannot be computed, so
estimate_rip_delta returns a randomized lower bound improved by a few
steps of projected power iteration from the worst sampled matrix.
"""

from dataclasses import dataclass

import numpy as np
from beartype.typing import Dict, List, Literal, Optional

from .env import HETSENSE_REFINE_STEPS
from .errors import DimensionError
from .logger import logger
from .misc import array_digest, derive_seed, make_rng, pairwise_sum
from .sensing import MeasurementBatch, OrthonormalBasis, make_orthonormal_basis, spectral_norm
from .typechecker import optional_typecheck


@dataclass(frozen=True)
class RipEstimate:
    delta_hat: float
    rank_tested: int
    trials: int
    worst_case_matrix_digest: str
    reference: str = "isometry"


@dataclass(frozen=True)
class LemmaRow:
    name: str
    statement: str
    trials: int
    max_ratio: float
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass(frozen=True)
class LemmaReport:
    delta: float
    rank: int
    rows: List[LemmaRow]

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def to_markdown(self) -> str:
        lines = [
            f"RIP error bounds at delta={self.delta:.4f}, rank {self.rank}",
            "",
            "| bound | statement | trials | max ratio | result |",
            "|---|---|---|---|---|",
        ]
        for row in self.rows:
            lines.append(
                f"| {row.name} | `{row.statement}` | {row.trials} | "
                f"{row.max_ratio:.4f} | {'pass' if row.passed else f'FAIL ({row.violations})'} |"
            )
        return "\n".join(lines)


def _check_square(batch: MeasurementBatch, mat: np.ndarray) -> None:
    if mat.shape != (batch.d, batch.d):
        raise DimensionError(
            f"Matrix of shape {mat.shape} does not match the batch dimension {batch.d}"
        )


@optional_typecheck
def rip_quadratic_form(batch: MeasurementBatch, mat: np.ndarray) -> float:
    "(1/m) sum_i <A_i, mat>^2"
    _check_square(batch, mat)
    parts = []
    for _, _, block in batch.chunks():
        values = batch.chunk_inner(block, mat)
        parts.append(float(values @ values))
    return float(pairwise_sum(parts) / batch.m)


@optional_typecheck
def rip_error_operator(batch: MeasurementBatch, mat: np.ndarray) -> np.ndarray:
    """(1/m) sum_i <A_i, mat> A_i - mat. Gaussian measurements are not
    symmetric, neither is the output. Rank-one batches use the vector form
    (1/m) X^T diag(x_i^T mat x_i) X - mat."""
    _check_square(batch, mat)
    parts = [
        batch.chunk_adjoint(block, batch.chunk_inner(block, mat))
        for _, _, block in batch.chunks()
    ]
    return pairwise_sum(parts) / batch.m - mat


@optional_typecheck
def sample_test_matrix(rng: np.random.Generator, d: int, r: int) -> np.ndarray:
    """Unit Frobenius norm symmetric matrix G G^T - H H^T of rank at most r,
    G and H Gaussian of widths ceil(r/2) and floor(r/2)."""
    g = rng.standard_normal((d, (r + 1) // 2))
    h = rng.standard_normal((d, r // 2))
    mat = g @ g.T - h @ h.T
    return mat / np.linalg.norm(mat)


def _project_rank(mat: np.ndarray, r: int) -> np.ndarray:
    "best rank r approximation of a symmetric matrix, renormalized"
    lam, vecs = np.linalg.eigh((mat + mat.T) / 2)
    keep = np.argsort(-np.abs(lam), kind="stable")[:r]
    out = (vecs[:, keep] * lam[keep]) @ vecs[:, keep].T
    norm = np.linalg.norm(out)
    return out / norm if norm > 0 else out


def _reference_value(mat: np.ndarray, reference: str) -> float:
    fro2 = float(np.sum(mat * mat))
    if reference == "rank-one":
        # E <x x^T, M>^2 = 2 ||M||_F^2 + tr(M)^2 for x ~ N(0, I)
        return 2 * fro2 + float(np.trace(mat)) ** 2
    return fro2


def _deviation_operator(batch: MeasurementBatch, mat: np.ndarray, reference: str) -> np.ndarray:
    "D with <D(M), M> = quadratic form minus reference"
    out = rip_error_operator(batch, mat)
    if reference == "rank-one":
        out = out - mat - np.trace(mat) * np.eye(batch.d)
    return out


@optional_typecheck
def estimate_rip_delta(
    batch: MeasurementBatch,
    r: int,
    trials: int,
    seed: int,
    reference: Literal["auto", "isometry", "rank-one"] = "auto",
    refine_steps: Optional[int] = None,
) -> RipEstimate:
    """Lower bound on the RIP constant of a batch at rank r.

    Each trial k draws a test matrix from its own sub-stream. The deviation
    is measured against ||M||_F^2, or against the rank-one expectation
    2||M||_F^2 + tr(M)^2 when `reference` resolves to rank-one (the default
    for rank-one batches).
    """
    assert trials >= 1, f"Need at least one trial, got {trials}"
    assert r >= 1, f"Need a rank of at least 1, got {r}"
    if reference == "auto":
        reference = "rank-one" if batch.kind == "rank-one" else "isometry"
    if refine_steps is None:
        refine_steps = HETSENSE_REFINE_STEPS

    best, best_mat = -1.0, None
    for k in range(trials):
        mat = sample_test_matrix(make_rng(seed, k), batch.d, r)
        dev = abs(rip_quadratic_form(batch, mat) - _reference_value(mat, reference))
        if dev > best:
            best, best_mat = dev, mat

    # projected power iteration on D (or -D), following the sign of the
    # current deviation
    mat = best_mat
    for step in range(refine_steps + 1):
        dev_op = _deviation_operator(batch, mat, reference)
        value = float(np.sum(dev_op * mat))
        if abs(value) > best:
            best, best_mat = abs(value), mat
        if step == refine_steps:
            break
        mat = _project_rank(dev_op if value >= 0 else -dev_op, r)

    logger.debug(f"RIP estimate rank={r} trials={trials} delta_hat={best:.5f}")
    return RipEstimate(
        delta_hat=float(best),
        rank_tested=r,
        trials=trials,
        worst_case_matrix_digest=array_digest(best_mat),
        reference=reference,
    )


def _ratio(lhs: float, rhs: float) -> float:
    if lhs == 0:
        return 0.0
    if rhs == 0:
        return float("inf")
    return lhs / rhs


@optional_typecheck
def lemma_ratios(
    batch: MeasurementBatch,
    delta: float,
    low_rank: np.ndarray,
    other: np.ndarray,
    full: np.ndarray,
    z: np.ndarray,
) -> Dict[str, float]:
    """Ratios lhs / rhs of the four RIP error bounds for one draw. `low_rank`
    and `other` must have rank at most r, `full` is arbitrary and `z` is
    any d x d' matrix. A ratio above 1 is a violation."""
    err_low = rip_error_operator(batch, low_rank)
    err_full = rip_error_operator(batch, full)
    fro = np.linalg.norm
    nuclear = float(np.sum(np.linalg.svd(full, compute_uv=False)))
    z_op = spectral_norm(z)
    return {
        "low-rank-inner": _ratio(
            abs(float(np.sum(err_low * other))), delta * fro(low_rank) * fro(other)
        ),
        "low-rank-operator": _ratio(
            spectral_norm(err_low @ z), delta * fro(low_rank) * z_op
        ),
        "nuclear-inner": _ratio(
            abs(float(np.sum(err_full * other))), delta * nuclear * fro(other)
        ),
        "nuclear-operator": _ratio(spectral_norm(err_full @ z), delta * nuclear * z_op),
    }


LEMMA_STATEMENTS = {
    "low-rank-inner": "|<E(X),Y>| <= delta ||X||_F ||Y||_F",
    "low-rank-operator": "||E(X) Z|| <= delta ||X||_F ||Z||",
    "nuclear-inner": "|<E(X),Y>| <= delta ||X||_* ||Y||_F",
    "nuclear-operator": "||E(X) Z|| <= delta ||X||_* ||Z||",
}


@optional_typecheck
def check_rip_lemma_bounds(
    batch: MeasurementBatch,
    delta: float,
    trials: int,
    seed: int,
    rank: int = 2,
) -> LemmaReport:
    """Check the four RIP error bounds over `trials` random draws.

    delta is expected to come from estimate_rip_delta at rank 2*rank (plus
    a margin). Violations are counted, never raised.
    """
    assert trials >= 1, f"Need at least one trial, got {trials}"
    d = batch.d
    worst = {name: 0.0 for name in LEMMA_STATEMENTS}
    violations = {name: 0 for name in LEMMA_STATEMENTS}
    for k in range(trials):
        rng = make_rng(seed, k)
        low_rank = sample_test_matrix(rng, d, rank)
        other = sample_test_matrix(rng, d, rank)
        full = rng.standard_normal((d, d))
        full = (full + full.T) / 2
        z = rng.standard_normal((d, d))
        for name, ratio in lemma_ratios(batch, delta, low_rank, other, full, z).items():
            worst[name] = max(worst[name], ratio)
            violations[name] += int(ratio > 1)
    rows = [
        LemmaRow(
            name=name,
            statement=statement,
            trials=trials,
            max_ratio=worst[name],
            violations=violations[name],
        )
        for name, statement in LEMMA_STATEMENTS.items()
    ]
    return LemmaReport(delta=float(delta), rank=rank, rows=rows)


@optional_typecheck
def subspace_angle(b1: OrthonormalBasis, b2: OrthonormalBasis) -> float:
    "||b1^T b2||_2, in [0, 1]"
    if b1.d != b2.d:
        raise DimensionError(f"Bases live in different dimensions: {b1.d} vs {b2.d}")
    return float(np.clip(spectral_norm(b1.columns.T @ b2.columns), 0.0, 1.0))


@optional_typecheck
def angle_exceedance_fraction(
    d: int,
    r1: int,
    r2: int,
    trials: int,
    seed: int,
    t: float = 3.0,
) -> float:
    "fraction of independent random basis pairs with angle above t sqrt((r1 + r2)/d)"
    assert trials >= 1, f"Need at least one trial, got {trials}"
    level = t * np.sqrt((r1 + r2) / d)
    exceed = 0
    for k in range(trials):
        b1 = make_orthonormal_basis(d, r1, derive_seed(seed, "angle_u", k))
        b2 = make_orthonormal_basis(d, r2, derive_seed(seed, "angle_v", k))
        exceed += int(subspace_angle(b1, b2) > level)
    return exceed / trials
