"""
Data generating process of multi-environment low-rank matrix sensing.

A ground truth holds an invariant basis U* (signal X* = U* U*^T) and a
spurious basis V*. Every environment e carries a symmetric r2 x r2 matrix
Sigma^(e) so that its spurious signal is X^(e) = V* Sigma^(e) V*^T. A batch
holds m noiseless measurements y_i = <A_i, X* + X^(e)> from one environment
(or, for the pooled baseline, from environments mixed per sample).

Gaussian batches are produced in chunks of MEASUREMENT_CHUNK matrices, chunk
j coming from its own sub-stream of the batch seed. A batch too large to be
held in memory only stores its seed and regenerates each chunk on demand,
which yields exactly the same matrices as the materialized version.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from beartype.typing import Iterator, List, Literal, Optional, Sequence, Tuple

from .env import HETSENSE_MAX_DENSE_ENTRIES
from .errors import DimensionError, InvalidDistributionError
from .logger import logger
from .misc import derive_seed, make_rng
from .typechecker import optional_typecheck

MEASUREMENT_CHUNK = 256
ORTHONORMAL_TOL = 1e-10
# spawn key of the per-sample environment choice of pooled batches, out of
# reach of the chunk counters
_INDEX_STREAM = (1 << 32) - 1


@optional_typecheck
def spectral_norm(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(mat)[0])


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    "d x r matrix with orthonormal columns"

    columns: np.ndarray

    def __post_init__(self):
        cols = _readonly(self.columns)
        if cols.ndim != 2:
            raise DimensionError(f"A basis must be a 2D matrix, got shape {cols.shape}")
        d, r = cols.shape
        if r > d:
            raise DimensionError(f"Rank {r} is larger than the dimension {d}")
        if r:
            gap = np.max(np.abs(cols.T @ cols - np.eye(r)))
            if gap > ORTHONORMAL_TOL:
                raise DimensionError(f"Columns are not orthonormal (max gap {gap:.2e})")
        object.__setattr__(self, "columns", cols)

    @property
    def d(self) -> int:
        return self.columns.shape[0]

    @property
    def r(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    """Invariant basis U* and spurious basis V*.

    epsilon1 is the overlap ||U*^T V*||_2, computed at construction.
    """

    u_star: OrthonormalBasis
    v_star: OrthonormalBasis
    epsilon1: float = field(init=False)

    def __post_init__(self):
        if self.u_star.d != self.v_star.d:
            raise DimensionError(
                f"Bases live in different dimensions: {self.u_star.d} vs {self.v_star.d}"
            )
        if self.u_star.r < 1:
            raise DimensionError("The invariant signal needs a rank of at least 1")
        object.__setattr__(
            self,
            "epsilon1",
            spectral_norm(self.u_star.columns.T @ self.v_star.columns),
        )

    @property
    def d(self) -> int:
        return self.u_star.d

    @property
    def r1(self) -> int:
        return self.u_star.r

    @property
    def r2(self) -> int:
        return self.v_star.r

    @cached_property
    def x_star(self) -> np.ndarray:
        u = self.u_star.columns
        return _readonly(u @ u.T)

    @cached_property
    def residual_projector(self) -> np.ndarray:
        "I - U*U*^T - V*V*^T, not an orthogonal projector unless U* is orthogonal to V*"
        v = self.v_star.columns
        return _readonly(np.eye(self.d) - self.x_star - v @ v.T)


@dataclass(frozen=True, eq=False)
class EnvironmentCoefficients:
    sigma: np.ndarray
    env_id: str

    def __post_init__(self):
        sigma = _readonly(self.sigma)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise DimensionError(f"Sigma must be square, got shape {sigma.shape}")
        if not np.array_equal(sigma, sigma.T):
            raise DimensionError("Sigma must be stored symmetric")
        object.__setattr__(self, "sigma", sigma)

    @property
    def r2(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True, eq=False)
class EnvironmentDistribution:
    """Law D of the environment coefficients.

    uniform-diagonal: Sigma = diag(s_1, ..., s_r2) with independent
        s_i ~ Unif[1 - M, 1 + M] (M is `half_width`).
    two-point: Sigma = diag(+-a, ..., +-a) with independent fair signs
        (a is `magnitude`).
    custom-table: Sigma is drawn from `table`, a list of
        (probability, symmetric matrix).
    """

    kind: Literal["uniform-diagonal", "two-point", "custom-table"]
    r2: int
    half_width: float = 0.0
    magnitude: float = 0.0
    table: Tuple[Tuple[float, np.ndarray], ...] = ()

    def __post_init__(self):
        if self.r2 < 0:
            raise InvalidDistributionError(f"r2 must be nonnegative, got {self.r2}")
        if self.kind == "uniform-diagonal":
            if not self.half_width >= 0:
                raise InvalidDistributionError(
                    f"Heterogeneity half-width must be nonnegative, got {self.half_width}"
                )
        elif self.kind == "two-point":
            if not self.magnitude >= 0:
                raise InvalidDistributionError(
                    f"Two-point magnitude must be nonnegative, got {self.magnitude}"
                )
        elif self.kind == "custom-table":
            if not self.table:
                raise InvalidDistributionError("A custom table needs at least one entry")
            entries = []
            for prob, mat in self.table:
                mat = _readonly(mat)
                if mat.shape != (self.r2, self.r2):
                    raise InvalidDistributionError(
                        f"Table matrix of shape {mat.shape} but r2={self.r2}"
                    )
                if not np.array_equal(mat, mat.T):
                    raise InvalidDistributionError("Table matrices must be symmetric")
                if prob < 0:
                    raise InvalidDistributionError(f"Negative probability {prob}")
                entries.append((float(prob), mat))
            total = sum(p for p, _ in entries)
            if abs(total - 1.0) > 1e-12:
                raise InvalidDistributionError(
                    f"Table probabilities sum to {total!r} instead of 1"
                )
            object.__setattr__(self, "table", tuple(entries))
        else:
            raise InvalidDistributionError(f"Unknown distribution kind '{self.kind}'")

    @classmethod
    def uniform_diagonal(cls, half_width: float, r2: int = 1) -> "EnvironmentDistribution":
        return cls(kind="uniform-diagonal", r2=r2, half_width=float(half_width))

    @classmethod
    def two_point(cls, magnitude: float, r2: int = 1) -> "EnvironmentDistribution":
        return cls(kind="two-point", r2=r2, magnitude=float(magnitude))

    @classmethod
    def custom_table(
        cls, entries: Sequence[Tuple[float, np.ndarray]]
    ) -> "EnvironmentDistribution":
        entries = tuple((p, np.atleast_2d(np.asarray(m, dtype=float))) for p, m in entries)
        assert entries, "Empty table"
        return cls(kind="custom-table", r2=entries[0][1].shape[0], table=entries)

    def draw_sigmas(self, rng: np.random.Generator, n: int) -> np.ndarray:
        "n independent draws, shape (n, r2, r2)"
        r2 = self.r2
        sigmas = np.zeros((n, r2, r2))
        if r2 == 0:
            return sigmas
        diag = np.arange(r2)
        if self.kind == "uniform-diagonal":
            sigmas[:, diag, diag] = rng.uniform(
                1.0 - self.half_width, 1.0 + self.half_width, size=(n, r2)
            )
        elif self.kind == "two-point":
            signs = rng.integers(0, 2, size=(n, r2)) * 2 - 1
            sigmas[:, diag, diag] = signs * self.magnitude
        else:
            probs = np.array([p for p, _ in self.table])
            idx = rng.choice(len(self.table), size=n, p=probs / probs.sum())
            stack = np.stack([mat for _, mat in self.table])
            sigmas = stack[idx].copy()
        return sigmas

    def diagonal_atoms(self, i: int = 0) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        "(values, probabilities) of Sigma_ii for discrete laws, None otherwise"
        if self.kind == "two-point":
            return np.array([-self.magnitude, self.magnitude]), np.array([0.5, 0.5])
        if self.kind == "custom-table":
            return (
                np.array([mat[i, i] for _, mat in self.table]),
                np.array([p for p, _ in self.table]),
            )
        return None

    def diagonal_support(self) -> Tuple[float, float]:
        "smallest and largest value any Sigma_ii can take"
        if self.r2 == 0:
            return 0.0, 0.0
        if self.kind == "uniform-diagonal":
            return 1.0 - self.half_width, 1.0 + self.half_width
        values = np.concatenate([self.diagonal_atoms(i)[0] for i in range(self.r2)])
        return float(values.min()), float(values.max())

    def sup_diagonal(self) -> float:
        "sup over the support of max_i |Sigma_ii|"
        lo, hi = self.diagonal_support()
        return max(abs(lo), abs(hi))

    def diagonal_mean(self) -> np.ndarray:
        if self.kind == "uniform-diagonal":
            return np.ones(self.r2)
        if self.kind == "two-point":
            return np.zeros(self.r2)
        out = []
        for i in range(self.r2):
            vals, probs = self.diagonal_atoms(i)
            out.append(float(probs @ vals))
        return np.array(out)

    def diagonal_variance(self) -> np.ndarray:
        if self.kind == "uniform-diagonal":
            return np.full(self.r2, (2 * self.half_width) ** 2 / 12)
        if self.kind == "two-point":
            return np.full(self.r2, self.magnitude**2)
        out = []
        for i in range(self.r2):
            vals, probs = self.diagonal_atoms(i)
            mean = probs @ vals
            out.append(float(probs @ (vals - mean) ** 2))
        return np.array(out)


@dataclass(frozen=True, eq=False)
class AssumptionReport:
    epsilon1: float
    epsilon2: float
    m1_hat: float
    m2_hat: float
    m2_monte_carlo: float
    eta_window: Tuple[float, float]
    window_nonempty: bool


@dataclass(frozen=True, eq=False)
class MeasurementBatch:
    """m noiseless measurements.

    targets holds X* + X^(e) for every environment observed by the batch and
    env_index tells which one each measurement sees (all zeros for a single
    environment). Gaussian matrices are stored in `matrices` when
    materialized, rank-one measurements x x^T only as their vector x.
    """

    kind: Literal["gaussian", "rank-one"]
    env_id: str
    m: int
    d: int
    seed: int
    targets: np.ndarray
    env_index: np.ndarray
    matrices: Optional[np.ndarray] = None
    vectors: Optional[np.ndarray] = None

    def __post_init__(self):
        assert self.m >= 1, "A batch needs at least one measurement"
        assert self.targets.shape[1:] == (self.d, self.d), self.targets.shape
        assert self.env_index.shape == (self.m,), self.env_index.shape
        if self.kind == "rank-one":
            assert self.vectors is not None and self.vectors.shape == (self.m, self.d)
        if self.matrices is not None:
            assert self.matrices.shape == (self.m, self.d, self.d), self.matrices.shape
        for name in ["targets", "env_index", "matrices", "vectors"]:
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, copy=True)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def materialized(self) -> bool:
        return self.kind == "rank-one" or self.matrices is not None

    def chunk_bounds(self) -> List[Tuple[int, int]]:
        return [
            (start, min(start + MEASUREMENT_CHUNK, self.m))
            for start in range(0, self.m, MEASUREMENT_CHUNK)
        ]

    def chunks(self) -> Iterator[Tuple[int, int, np.ndarray]]:
        """Yield (start, stop, block). For gaussian batches the block is the
        (c, d*d) row-major flattening of A_start..A_stop-1, for rank-one
        batches the (c, d) matrix of the vectors x_i."""
        for j, (start, stop) in enumerate(self.chunk_bounds()):
            if self.kind == "rank-one":
                yield start, stop, self.vectors[start:stop]
            elif self.matrices is not None:
                yield start, stop, self.matrices[start:stop].reshape(
                    stop - start, self.d * self.d
                )
            else:
                yield start, stop, gaussian_chunk(self.seed, j, stop - start, self.d)

    @cached_property
    def _target_eigenpairs(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [scipy.linalg.eigh(t) for t in self.targets]

    def chunk_responses(self, start: int, stop: int, block: np.ndarray) -> np.ndarray:
        "y_i = <A_i, target of i> for the measurements of one chunk"
        index = self.env_index[start:stop]
        if self.kind == "gaussian":
            flat = self.targets.reshape(self.targets.shape[0], self.d * self.d)
            values = block @ flat.T
            return values[np.arange(stop - start), index]
        out = np.empty(stop - start)
        for e in np.unique(index):
            mask = index == e
            lam, basis = self._target_eigenpairs[e]
            out[mask] = ((block[mask] @ basis) ** 2) @ lam
        return out

    def chunk_inner(self, block: np.ndarray, mat: np.ndarray) -> np.ndarray:
        "<A_i, mat> for the measurements of one chunk"
        if self.kind == "gaussian":
            return block @ mat.reshape(-1)
        return np.einsum("ip,ip->i", block @ mat, block)

    def chunk_adjoint(self, block: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        "sum_i coeffs_i A_i over one chunk, as a d x d matrix"
        if self.kind == "gaussian":
            return (coeffs @ block).reshape(self.d, self.d)
        return block.T @ (coeffs[:, None] * block)

    @cached_property
    def responses(self) -> np.ndarray:
        parts = [self.chunk_responses(start, stop, block) for start, stop, block in self.chunks()]
        out = np.concatenate(parts)
        out.setflags(write=False)
        return out

    def dense_matrices(self) -> np.ndarray:
        "all m measurement matrices, (m, d, d). Meant for small test instances."
        if self.kind == "rank-one":
            return np.einsum("ip,iq->ipq", self.vectors, self.vectors)
        if self.matrices is not None:
            return np.array(self.matrices)
        blocks = [block for _, _, block in self.chunks()]
        return np.concatenate(blocks).reshape(self.m, self.d, self.d)

    def _with_matrices(self, matrices: np.ndarray, env_id: str) -> "MeasurementBatch":
        return MeasurementBatch(
            kind="gaussian",
            env_id=env_id,
            m=self.m,
            d=self.d,
            seed=self.seed,
            targets=self.targets,
            env_index=self.env_index,
            matrices=matrices,
        )

    def symmetrized(self) -> "MeasurementBatch":
        "copy with every A_i replaced by (A_i + A_i^T)/2, responses recomputed"
        mats = self.dense_matrices()
        return self._with_matrices(
            (mats + np.transpose(mats, (0, 2, 1))) / 2, self.env_id + "-sym"
        )

    def transposed(self) -> "MeasurementBatch":
        "copy with every A_i replaced by A_i^T, responses unchanged for symmetric targets"
        mats = self.dense_matrices()
        return self._with_matrices(np.transpose(mats, (0, 2, 1)), self.env_id + "-T")


@optional_typecheck
def gaussian_chunk(seed: int, j: int, count: int, d: int) -> np.ndarray:
    "chunk j of a gaussian batch: count flattened d x d matrices with N(0,1) entries"
    return make_rng(seed, j).standard_normal((count, d * d))


@optional_typecheck
def make_orthonormal_basis(d: int, r: int, seed: int) -> OrthonormalBasis:
    """QR orthonormalization of a d x r standard normal matrix. The signs
    are fixed so that R has a nonnegative diagonal."""
    if not 1 <= r <= d:
        raise DimensionError(f"Need 1 <= r <= d, got r={r} and d={d}")
    gauss = make_rng(seed).standard_normal((d, r))
    return OrthonormalBasis(_qr_columns(gauss))


def _qr_columns(mat: np.ndarray) -> np.ndarray:
    q, r = scipy.linalg.qr(mat, mode="economic")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


@optional_typecheck
def make_ground_truth(
    d: int, r1: int, r2: int, seed: int, orthogonal: bool = False
) -> GroundTruthModel:
    """Two independent random orthonormal bases. With `orthogonal`, V* is
    drawn inside the orthogonal complement of U* so that epsilon1 = 0."""
    if r1 < 1 or r2 < 0:
        raise DimensionError(f"Need r1 >= 1 and r2 >= 0, got r1={r1} and r2={r2}")
    if r1 + r2 > d:
        raise DimensionError(f"r1 + r2 = {r1 + r2} exceeds the dimension d = {d}")
    u_star = make_orthonormal_basis(d, r1, derive_seed(seed, "u_star"))
    if r2 == 0:
        v_star = OrthonormalBasis(np.zeros((d, 0)))
    elif not orthogonal:
        v_star = make_orthonormal_basis(d, r2, derive_seed(seed, "v_star"))
    else:
        u = u_star.columns
        gauss = make_rng(derive_seed(seed, "v_star")).standard_normal((d, r2))
        # projected twice to remove the rounding left by a single pass
        for _ in range(2):
            gauss = gauss - u @ (u.T @ gauss)
        v_star = OrthonormalBasis(_qr_columns(gauss))
    model = GroundTruthModel(u_star=u_star, v_star=v_star)
    logger.debug(f"Ground truth d={d} r1={r1} r2={r2} epsilon1={model.epsilon1:.4f}")
    return model


@optional_typecheck
def ground_truth_from_bases(u_star: np.ndarray, v_star: np.ndarray) -> GroundTruthModel:
    "build a model from given bases, mostly for tests"
    return GroundTruthModel(u_star=OrthonormalBasis(u_star), v_star=OrthonormalBasis(v_star))


@optional_typecheck
def sample_environment(dist: EnvironmentDistribution, seed: int) -> EnvironmentCoefficients:
    "one draw of Sigma^(e), deterministic given the seed"
    sigma = dist.draw_sigmas(make_rng(seed), 1)[0]
    return EnvironmentCoefficients(sigma=sigma, env_id=f"e{seed & 0xFFFFFFFF:08x}")


@optional_typecheck
def sample_environments(
    dist: EnvironmentDistribution, n: int, seed: int
) -> List[EnvironmentCoefficients]:
    "n i.i.d. draws from one seed"
    sigmas = dist.draw_sigmas(make_rng(seed), n)
    return [
        EnvironmentCoefficients(sigma=s, env_id=f"e{seed & 0xFFFFFFFF:08x}-{i}")
        for i, s in enumerate(sigmas)
    ]


@optional_typecheck
def spurious_matrix(model: GroundTruthModel, env: EnvironmentCoefficients) -> np.ndarray:
    "X^(e) = V* Sigma^(e) V*^T"
    if env.r2 != model.r2:
        raise DimensionError(f"Environment has r2={env.r2} but the model has r2={model.r2}")
    v = model.v_star.columns
    out = v @ env.sigma @ v.T
    return (out + out.T) / 2


@optional_typecheck
def total_signal(model: GroundTruthModel, env: EnvironmentCoefficients) -> np.ndarray:
    "X* + X^(e)"
    return model.x_star + spurious_matrix(model, env)


def _should_materialize(m: int, d: int, materialize: Optional[bool]) -> bool:
    if materialize is None:
        return m * d * d <= HETSENSE_MAX_DENSE_ENTRIES
    return materialize


def _gaussian_batch(
    targets: np.ndarray,
    env_index: np.ndarray,
    env_id: str,
    m: int,
    d: int,
    seed: int,
    materialize: Optional[bool],
) -> MeasurementBatch:
    batch = MeasurementBatch(
        kind="gaussian",
        env_id=env_id,
        m=m,
        d=d,
        seed=seed,
        targets=targets,
        env_index=env_index,
    )
    if not _should_materialize(m, d, materialize):
        return batch
    blocks = [block for _, _, block in batch.chunks()]
    return MeasurementBatch(
        kind="gaussian",
        env_id=env_id,
        m=m,
        d=d,
        seed=seed,
        targets=targets,
        env_index=env_index,
        matrices=np.concatenate(blocks).reshape(m, d, d),
    )


@optional_typecheck
def generate_gaussian_batch(
    model: GroundTruthModel,
    env: EnvironmentCoefficients,
    m: int,
    seed: int,
    materialize: Optional[bool] = None,
) -> MeasurementBatch:
    """m matrices with i.i.d. N(0, 1) entries (not symmetrized) and their
    exact responses. The 1/m normalization lives in the loss."""
    assert m >= 1, f"m must be at least 1, got {m}"
    targets = total_signal(model, env)[None]
    return _gaussian_batch(
        targets, np.zeros(m, dtype=int), env.env_id, m, model.d, seed, materialize
    )


@optional_typecheck
def generate_rank_one_batch(
    model: GroundTruthModel, env: EnvironmentCoefficients, m: int, seed: int
) -> MeasurementBatch:
    "x_i ~ N(0, I_d), y_i = <x_i x_i^T, X* + X^(e)>"
    assert m >= 1, f"m must be at least 1, got {m}"
    vectors = make_rng(seed).standard_normal((m, model.d))
    return MeasurementBatch(
        kind="rank-one",
        env_id=env.env_id,
        m=m,
        d=model.d,
        seed=seed,
        targets=total_signal(model, env)[None],
        env_index=np.zeros(m, dtype=int),
        vectors=vectors,
    )


@optional_typecheck
def generate_pooled_batch(
    model: GroundTruthModel,
    envs: Sequence[EnvironmentCoefficients],
    m: int,
    seed: int,
    kind: Literal["gaussian", "rank-one"] = "gaussian",
    materialize: Optional[bool] = None,
) -> MeasurementBatch:
    "one batch whose measurements each see an environment chosen uniformly"
    assert envs, "Pooling needs at least one environment"
    assert m >= 1, f"m must be at least 1, got {m}"
    targets = np.stack([total_signal(model, env) for env in envs])
    env_index = make_rng(seed, _INDEX_STREAM).integers(0, len(envs), size=m)
    if kind == "gaussian":
        return _gaussian_batch(targets, env_index, "pooled", m, model.d, seed, materialize)
    return MeasurementBatch(
        kind="rank-one",
        env_id="pooled",
        m=m,
        d=model.d,
        seed=seed,
        targets=targets,
        env_index=env_index,
        vectors=make_rng(seed).standard_normal((m, model.d)),
    )


@optional_typecheck
def generate_batch(
    model: GroundTruthModel,
    env: EnvironmentCoefficients,
    m: int,
    seed: int,
    kind: Literal["gaussian", "rank-one"],
) -> MeasurementBatch:
    if kind == "gaussian":
        return generate_gaussian_batch(model, env, m, seed)
    return generate_rank_one_batch(model, env, m, seed)


@optional_typecheck
def check_assumptions(
    model: GroundTruthModel,
    dist: EnvironmentDistribution,
    n_samples: int,
    seed: int,
) -> AssumptionReport:
    """Estimates of the regularity constants of the environment law.

    m1_hat and epsilon2 are taken over n_samples draws. m2_hat uses the
    closed-form moments of the law (every supported kind has them), the
    purely sampled value is kept as m2_monte_carlo.
    """
    assert n_samples >= 100, f"Need at least 100 samples, got {n_samples}"
    if dist.r2 != model.r2:
        raise DimensionError(f"Distribution has r2={dist.r2} but the model has r2={model.r2}")
    r2 = dist.r2
    sigmas = dist.draw_sigmas(make_rng(seed), n_samples)
    if r2 == 0:
        m1_hat = epsilon2 = m2_hat = m2_mc = 0.0
    else:
        diag = np.diagonal(sigmas, axis1=1, axis2=2)
        m1_hat = float(np.max(np.abs(diag)))
        off = np.abs(sigmas).sum(axis=2) - np.abs(diag)
        epsilon2 = float(r2**1.5 * np.max(off))
        m2_hat = float(
            np.min(dist.diagonal_variance() / (1 + np.abs(dist.diagonal_mean())))
        )
        m2_mc = float(np.min(diag.var(axis=0) / (1 + np.abs(diag.mean(axis=0)))))
    low = 24 / m2_hat if m2_hat > 0 else float("inf")
    high = 1 / (64 * m1_hat) if m1_hat > 0 else float("inf")
    return AssumptionReport(
        epsilon1=model.epsilon1,
        epsilon2=epsilon2,
        m1_hat=m1_hat,
        m2_hat=m2_hat,
        m2_monte_carlo=m2_mc,
        eta_window=(low, high),
        window_nonempty=bool(low < high),
    )
