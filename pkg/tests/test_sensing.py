import os

import numpy as np
import pytest

os.environ["HETSENSE_TYPECHECKING"] = "crash"

from hetsense.utils.env import load, parse
from hetsense.utils.errors import DimensionError, InvalidDistributionError
from hetsense.utils.misc import derive_seed, make_rng, pairwise_sum
from hetsense.utils.sensing import (
    MEASUREMENT_CHUNK,
    EnvironmentCoefficients,
    EnvironmentDistribution,
    check_assumptions,
    generate_gaussian_batch,
    generate_pooled_batch,
    generate_rank_one_batch,
    ground_truth_from_bases,
    make_ground_truth,
    make_orthonormal_basis,
    sample_environment,
    sample_environments,
    spurious_matrix,
    total_signal,
)


@pytest.fixture
def model():
    return make_ground_truth(d=8, r1=1, r2=2, seed=3)


@pytest.fixture
def env(model):
    dist = EnvironmentDistribution.uniform_diagonal(4.0, r2=2)
    return sample_environment(dist, seed=11)


@pytest.mark.basic
def test_ground_truth_bases_are_orthonormal(model):
    for basis in [model.u_star, model.v_star]:
        cols = basis.columns
        assert np.allclose(cols.T @ cols, np.eye(basis.r), atol=1e-12)
    assert 0 <= model.epsilon1 <= 1
    assert model.d == 8 and model.r1 == 1 and model.r2 == 2
    assert np.allclose(model.x_star, model.u_star.columns @ model.u_star.columns.T)


@pytest.mark.basic
def test_ground_truth_is_deterministic():
    a = make_ground_truth(d=10, r1=2, r2=1, seed=5)
    b = make_ground_truth(d=10, r1=2, r2=1, seed=5)
    c = make_ground_truth(d=10, r1=2, r2=1, seed=6)
    assert np.array_equal(a.u_star.columns, b.u_star.columns)
    assert np.array_equal(a.v_star.columns, b.v_star.columns)
    assert not np.array_equal(a.u_star.columns, c.u_star.columns)


@pytest.mark.basic
def test_orthogonal_ground_truth():
    model = make_ground_truth(d=12, r1=2, r2=3, seed=1, orthogonal=True)
    assert model.epsilon1 < 1e-12


@pytest.mark.basic
def test_ground_truth_dimension_errors():
    with pytest.raises(DimensionError):
        make_ground_truth(d=3, r1=2, r2=2, seed=0)
    with pytest.raises(DimensionError):
        make_ground_truth(d=3, r1=0, r2=1, seed=0)
    with pytest.raises(DimensionError):
        make_orthonormal_basis(d=3, r=4, seed=0)
    with pytest.raises(DimensionError):
        ground_truth_from_bases(np.ones((4, 1)), np.zeros((4, 0)))


@pytest.mark.basic
def test_forced_bases_epsilon1():
    e = np.eye(4)
    model = ground_truth_from_bases(e[:, :1], e[:, 1:2])
    assert model.epsilon1 == 0.0
    tilted = np.array([[np.cos(0.3)], [np.sin(0.3)], [0.0], [0.0]])
    model = ground_truth_from_bases(e[:, :1], tilted)
    assert np.isclose(model.epsilon1, np.cos(0.3))


@pytest.mark.basic
def test_distribution_validation():
    with pytest.raises(InvalidDistributionError):
        EnvironmentDistribution.uniform_diagonal(-1.0)
    with pytest.raises(InvalidDistributionError):
        EnvironmentDistribution.two_point(-2.0)
    with pytest.raises(InvalidDistributionError):
        EnvironmentDistribution.custom_table([(0.5, np.eye(1)), (0.4, -np.eye(1))])
    with pytest.raises(InvalidDistributionError):
        EnvironmentDistribution.custom_table([(1.0, np.array([[1.0, 2.0], [0.0, 1.0]]))])


@pytest.mark.basic
def test_distribution_draws():
    rng = make_rng(0)
    uniform = EnvironmentDistribution.uniform_diagonal(3.0, r2=2)
    sigmas = uniform.draw_sigmas(rng, 500)
    assert sigmas.shape == (500, 2, 2)
    assert np.all(sigmas[:, 0, 1] == 0)
    assert np.all(np.abs(sigmas[:, 0, 0] - 1) <= 3)
    assert uniform.sup_diagonal() == 4.0
    assert np.allclose(uniform.diagonal_variance(), 3.0)

    two = EnvironmentDistribution.two_point(2000.0)
    values = two.draw_sigmas(rng, 200)[:, 0, 0]
    assert set(np.unique(values)) == {-2000.0, 2000.0}
    assert two.diagonal_support() == (-2000.0, 2000.0)

    table = EnvironmentDistribution.custom_table(
        [(0.25, np.array([[3.0]])), (0.75, np.array([[-1.0]]))]
    )
    assert table.r2 == 1
    assert np.allclose(table.diagonal_mean(), [0.0])
    assert np.allclose(table.diagonal_variance(), [3.0])


@pytest.mark.basic
def test_environment_coefficients_must_be_symmetric():
    with pytest.raises(DimensionError):
        EnvironmentCoefficients(sigma=np.array([[1.0, 0.5], [0.0, 1.0]]), env_id="x")
    with pytest.raises(DimensionError):
        EnvironmentCoefficients(sigma=np.ones((2, 3)), env_id="x")


@pytest.mark.basic
def test_sample_environment_is_deterministic():
    dist = EnvironmentDistribution.uniform_diagonal(10.0, r2=1)
    a = sample_environment(dist, 42)
    b = sample_environment(dist, 42)
    assert np.array_equal(a.sigma, b.sigma)
    assert a.env_id == b.env_id
    envs = sample_environments(dist, 5, 42)
    assert len(envs) == 5
    assert len({e.env_id for e in envs}) == 5


@pytest.mark.basic
def test_spurious_matrix(model, env):
    v = model.v_star.columns
    assert np.allclose(spurious_matrix(model, env), v @ env.sigma @ v.T)
    assert np.allclose(total_signal(model, env), model.x_star + v @ env.sigma @ v.T)
    wrong = EnvironmentCoefficients(sigma=np.eye(1), env_id="x")
    with pytest.raises(DimensionError):
        spurious_matrix(model, wrong)


@pytest.mark.basic
def test_gaussian_batch_responses(model, env):
    m = MEASUREMENT_CHUNK + 44
    batch = generate_gaussian_batch(model, env, m, seed=9)
    mats = batch.dense_matrices()
    assert mats.shape == (m, 8, 8)
    expected = np.einsum("ipq,pq->i", mats, total_signal(model, env))
    assert np.allclose(batch.responses, expected, rtol=1e-10, atol=1e-10)
    assert batch.env_id == env.env_id


@pytest.mark.basic
def test_gaussian_batch_chunked_equals_materialized(model, env):
    m = 2 * MEASUREMENT_CHUNK + 7
    dense = generate_gaussian_batch(model, env, m, seed=9, materialize=True)
    lazy = generate_gaussian_batch(model, env, m, seed=9, materialize=False)
    assert dense.materialized and not lazy.materialized
    assert np.array_equal(dense.dense_matrices(), lazy.dense_matrices())
    assert np.array_equal(dense.responses, lazy.responses)


@pytest.mark.basic
def test_gaussian_batch_depends_on_seed(model, env):
    a = generate_gaussian_batch(model, env, 50, seed=1)
    b = generate_gaussian_batch(model, env, 50, seed=2)
    assert not np.array_equal(a.responses, b.responses)


@pytest.mark.basic
def test_rank_one_batch(model, env):
    batch = generate_rank_one_batch(model, env, 300, seed=4)
    x = batch.vectors
    target = total_signal(model, env)
    expected = np.einsum("ip,pq,iq->i", x, target, x)
    assert np.allclose(batch.responses, expected, rtol=1e-9, atol=1e-9)
    mats = batch.dense_matrices()
    assert np.allclose(mats, np.transpose(mats, (0, 2, 1)))


@pytest.mark.basic
def test_pooled_batch(model):
    dist = EnvironmentDistribution.uniform_diagonal(4.0, r2=2)
    envs = sample_environments(dist, 3, 7)
    batch = generate_pooled_batch(model, envs, 400, seed=5)
    assert batch.env_id == "pooled"
    assert set(np.unique(batch.env_index)) <= {0, 1, 2}
    mats = batch.dense_matrices()
    targets = np.stack([total_signal(model, e) for e in envs])
    expected = np.einsum("ipq,ipq->i", mats, targets[batch.env_index])
    assert np.allclose(batch.responses, expected, rtol=1e-10, atol=1e-10)

    rank_one = generate_pooled_batch(model, envs, 400, seed=5, kind="rank-one")
    assert np.array_equal(rank_one.env_index, batch.env_index)


@pytest.mark.basic
def test_symmetrized_batch(model, env):
    batch = generate_gaussian_batch(model, env, 40, seed=2)
    sym = batch.symmetrized()
    mats = sym.dense_matrices()
    assert np.allclose(mats, np.transpose(mats, (0, 2, 1)))
    # targets are symmetric so symmetrizing keeps the responses
    assert np.allclose(sym.responses, batch.responses)


@pytest.mark.basic
def test_check_assumptions(model):
    dist = EnvironmentDistribution.uniform_diagonal(10.0, r2=2)
    report = check_assumptions(model, dist, 1000, seed=1)
    assert report.m1_hat <= 11.0
    assert report.epsilon2 == 0.0
    assert np.isclose(report.m2_hat, (20.0**2 / 12) / 2)
    assert report.eta_window[0] == pytest.approx(24 / report.m2_hat)
    assert not report.window_nonempty
    with pytest.raises(AssertionError):
        check_assumptions(model, dist, 50, seed=1)


@pytest.mark.basic
def test_substreams_are_independent():
    assert derive_seed(1, "batch", 0) != derive_seed(1, "batch", 1)
    assert derive_seed(1, "batch", 0) != derive_seed(1, "environment", 0)
    assert derive_seed(1, "batch", 0) == derive_seed(1, "batch", 0)
    assert pairwise_sum([1.0, 2.0, 3.0, 4.0, 5.0]) == 15.0


@pytest.mark.basic
def test_typechecking_modes():
    from beartype.roar import BeartypeCallHintParamViolation

    from hetsense.utils.typechecker import make_typechecker

    def double(x: int) -> int:
        return 2 * x

    assert make_typechecker("disabled")(double) is double
    with pytest.raises(ValueError):
        make_typechecker("loud")
    with pytest.raises(BeartypeCallHintParamViolation):
        make_ground_truth(d="8", r1=1, r2=1, seed=0)


@pytest.mark.basic
def test_env_parsing():
    assert parse("true") is True
    assert parse("-1") == -1
    assert parse("0.05") == 0.05
    assert parse("none") is None
    assert parse("loky") == "loky"

    values = load({"HETSENSE_N_JOBS": "2", "HETSENSE_RIP_MARGIN": "0.1", "HOME": "/tmp"})
    assert values["HETSENSE_N_JOBS"] == 2
    assert values["HETSENSE_RIP_MARGIN"] == 0.1
    assert values["HETSENSE_TYPECHECKING"] == "warn"
    with pytest.raises(TypeError):
        load({"HETSENSE_PARALLEL_BACKEND": "dask"})
