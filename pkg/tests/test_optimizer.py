import os
import sys

import numpy as np
import pytest

os.environ["HETSENSE_TYPECHECKING"] = "crash"

from hetsense.utils.errors import (
    ConfigurationError,
    DimensionError,
    DivergenceError,
    DomainViolationError,
)
from hetsense.utils.optimizer import (
    DELTA_CAP,
    IterateState,
    OptimizerConfig,
    ShrinkageConfig,
    TruncationConfig,
    default_steps,
    divergence_threshold,
    init_iterate,
    least_squares_loss,
    loss_gradient,
    predicted_error_floor,
    resolve_truncation_radius,
    run_hetero_sgd,
    run_pooled_gd,
    run_quadratic_sgd,
    sgd_step,
    shrinkage_factor,
    shrinkage_tau,
)
from hetsense.utils.sensing import (
    EnvironmentDistribution,
    generate_gaussian_batch,
    generate_rank_one_batch,
    make_ground_truth,
    sample_environment,
    sample_environments,
    total_signal,
)
from hetsense.utils.tasks.sweep import pooled_environments


@pytest.fixture
def model():
    return make_ground_truth(d=6, r1=1, r2=1, seed=2)


@pytest.fixture
def dist():
    return EnvironmentDistribution.uniform_diagonal(5.0)


def _numeric_gradient(batch, u, eps=1e-6, radius=None):
    grad = np.zeros_like(u)
    for idx in np.ndindex(*u.shape):
        plus, minus = u.copy(), u.copy()
        plus[idx] += eps
        minus[idx] -= eps
        grad[idx] = (
            least_squares_loss(batch, plus, radius) - least_squares_loss(batch, minus, radius)
        ) / (2 * eps)
    return grad


@pytest.mark.basic
def test_config_validation():
    with pytest.raises(ConfigurationError):
        OptimizerConfig(eta=-0.1, alpha=1e-3, batch_size=10)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(eta=0.1, alpha=0.0, batch_size=10)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=0)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=10, steps=-1)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(eta=0.0, alpha=1e-3, batch_size=10)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=10, truncation=TruncationConfig())
    with pytest.raises(ConfigurationError):
        OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=10, divergence_threshold=-1.0)
    with pytest.raises(ConfigurationError):
        TruncationConfig(radius_mode="fixed")

    config = OptimizerConfig(eta=0.0, alpha=1e-3, batch_size=10, steps=4)
    assert config.resolved_steps() == 4
    assert not config.truncation_enabled and not config.shrinkage_enabled


@pytest.mark.basic
def test_default_steps():
    assert default_steps(1e-3, 0.1) == 691
    assert default_steps(1e-3, 0.1, constant=1.0) == 70
    assert OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=10).resolved_steps() == 691
    with pytest.raises(AssertionError):
        default_steps(1e-3, 0.0)
    assert np.isclose(divergence_threshold(1, 11.0), 10 * np.sqrt(12))


@pytest.mark.basic
def test_init_iterate(model):
    over = init_iterate(OptimizerConfig(eta=0.1, alpha=0.01, batch_size=10), model)
    assert np.array_equal(over.u, 0.01 * np.eye(6))
    assert over.step == 0 and over.rng_cursor == 0
    assert not over.u.flags.writeable

    config = OptimizerConfig(eta=0.1, alpha=0.01, batch_size=10, parameterization="exact")
    a = init_iterate(config, model, seed=3)
    b = init_iterate(config, model, seed=3)
    assert a.u.shape == (6, 2)
    assert np.array_equal(a.u, b.u)


@pytest.mark.basic
def test_gaussian_gradient_matches_finite_differences(model, dist):
    env = sample_environment(dist, 1)
    batch = generate_gaussian_batch(model, env, 40, seed=3)
    u = 0.3 * np.random.default_rng(0).standard_normal((6, 3))
    # A_i are not symmetric, the derivative sums both orientations
    analytic = loss_gradient(batch, u) + loss_gradient(batch.transposed(), u)
    assert np.allclose(analytic, _numeric_gradient(batch, u), rtol=1e-5, atol=1e-7)


@pytest.mark.basic
def test_rank_one_gradient_matches_finite_differences(model, dist):
    env = sample_environment(dist, 1)
    batch = generate_rank_one_batch(model, env, 40, seed=3)
    u = 0.3 * np.random.default_rng(0).standard_normal((6, 2))
    analytic = 2 * loss_gradient(batch, u)
    assert np.allclose(analytic, _numeric_gradient(batch, u), rtol=1e-5, atol=1e-7)


@pytest.mark.basic
def test_truncated_gradient_matches_finite_differences(model, dist):
    env = sample_environment(dist, 1)
    batch = generate_rank_one_batch(model, env, 40, seed=3)
    for point in range(10):
        u = 0.3 * np.random.default_rng(point).standard_normal((6, 2))
        preds = np.sort(np.sum((batch.vectors @ u) ** 2, axis=1))
        # radius in the widest gap of the middle predictions, so that
        # no sample crosses it within the finite difference step
        middle = preds[10:30]
        gap = int(np.argmax(np.diff(middle)))
        radius = float((middle[gap] + middle[gap + 1]) / 2)
        kept = int(np.sum(preds <= radius))
        assert 10 < kept < 30
        analytic = 2 * loss_gradient(batch, u, truncation_radius=radius)
        numeric = _numeric_gradient(batch, u, radius=radius)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-7)
        assert not np.allclose(analytic, 2 * loss_gradient(batch, u))


@pytest.mark.basic
def test_truncation_drops_samples(model, dist):
    env = sample_environment(dist, 1)
    batch = generate_rank_one_batch(model, env, 50, seed=3)
    u = 0.3 * np.ones((6, 2))
    assert np.all(loss_gradient(batch, u, truncation_radius=1e-12) == 0)
    assert least_squares_loss(batch, u, truncation_radius=1e-12) == 0.0
    assert np.allclose(loss_gradient(batch, u, truncation_radius=1e12), loss_gradient(batch, u))


@pytest.mark.basic
def test_gradient_dimension_mismatch(model, dist):
    batch = generate_gaussian_batch(model, sample_environment(dist, 1), 10, seed=3)
    with pytest.raises(DimensionError):
        loss_gradient(batch, np.ones((5, 2)))


@pytest.mark.basic
def test_sgd_step(model, dist):
    batch = generate_gaussian_batch(model, sample_environment(dist, 1), 30, seed=4)
    state = IterateState(u=0.1 * np.eye(6), step=3, rng_cursor=3)
    nxt = sgd_step(state, batch, 0.05)
    assert nxt.step == 4 and nxt.rng_cursor == 4
    assert np.allclose(nxt.u, state.u - 0.05 * loss_gradient(batch, state.u))

    big = IterateState(u=100 * np.eye(6), step=0, rng_cursor=0)
    with pytest.raises(DivergenceError):
        sgd_step(big, batch, 1.0, divergence_threshold=10.0)


@pytest.mark.basic
def test_shrinkage(model, dist):
    assert np.isclose(shrinkage_factor(np.zeros((3, 3)), 0.1, 1.0), 1 / 1.1)
    with pytest.raises(DivergenceError):
        shrinkage_factor(10 * np.eye(1), 0.1, 0.0)

    env = sample_environment(dist, 2)
    batch = generate_rank_one_batch(model, env, 2000, seed=1)
    target = total_signal(model, env)
    assert np.isclose(shrinkage_tau("oracle", batch, target), np.linalg.norm(target, 2))
    assert np.isclose(shrinkage_tau("oracle-trace", batch, target), np.trace(target))
    assert np.isclose(shrinkage_tau("trace-moment-estimate", batch), np.mean(batch.responses))
    assert shrinkage_tau("frobenius-moment-estimate", batch) > 0
    with pytest.raises(ConfigurationError):
        shrinkage_tau("median", batch)


@pytest.mark.basic
def test_truncation_radius(model, dist):
    env = sample_environment(dist, 1)
    plain = OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=100, measurement_kind="rank-one")
    assert resolve_truncation_radius(plain, model, env, 1) == (None, None)

    fixed = OptimizerConfig(
        eta=0.1,
        alpha=1e-3,
        batch_size=100,
        measurement_kind="rank-one",
        truncation=TruncationConfig(radius_mode="fixed", radius=7.0),
    )
    assert resolve_truncation_radius(fixed, model, env, 1) == (7.0, None)

    auto = OptimizerConfig(
        eta=0.1,
        alpha=1e-3,
        batch_size=200,
        measurement_kind="rank-one",
        truncation=TruncationConfig(),
    )
    radius, delta_hat = resolve_truncation_radius(auto, model, env, 1)
    assert delta_hat > 0
    assert radius >= np.log(100) - 1e-12

    # at m = 200 the estimate is far above the cap, the radius is log(100) times the scale
    assert delta_hat > DELTA_CAP
    assert np.isclose(radius, np.log(1 / DELTA_CAP))
    scaled = OptimizerConfig(
        eta=0.1,
        alpha=1e-3,
        batch_size=200,
        measurement_kind="rank-one",
        truncation=TruncationConfig(radius_scale=4.0),
    )
    assert np.isclose(resolve_truncation_radius(scaled, model, env, 1)[0], 4 * radius)
    with pytest.raises(ConfigurationError):
        TruncationConfig(radius_scale=0.0)


@pytest.mark.basic
def test_predicted_error_floor():
    dist = EnvironmentDistribution.uniform_diagonal(10.0)
    config = OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=8000)
    # E s^2 = 100 / 3 + 1 for s ~ Unif[-9, 11]
    expected = np.sqrt(2 * 0.1 * 100 * (100 / 3 + 1) / (8000 * 1.9))
    assert np.isclose(predicted_error_floor(config, 100, dist), expected)
    assert predicted_error_floor(config, 100, dist) > 0.2
    assert predicted_error_floor(config, 20, dist) < 0.1

    discrete = EnvironmentDistribution.two_point(3.0)
    assert np.isclose(
        predicted_error_floor(config, 10, discrete),
        np.sqrt(2 * 0.1 * 10 * 9 / (8000 * 1.9)),
    )

    rank_one = OptimizerConfig(
        eta=0.03,
        alpha=1e-3,
        batch_size=8000,
        measurement_kind="rank-one",
        truncation=TruncationConfig(radius_scale=4.0),
        shrinkage=ShrinkageConfig(tau_mode="oracle-trace"),
    )
    flat = EnvironmentDistribution.uniform_diagonal(0.0)
    kick = 3 * 0.03**2 * 30 / (1.03**2 * 8000)
    assert np.isclose(
        predicted_error_floor(rank_one, 30, flat), np.sqrt(2 * kick / (1 - 0.94**2))
    )
    assert predicted_error_floor(rank_one, 30, dist) < 0.15

    steep = OptimizerConfig(
        eta=0.2,
        alpha=1e-3,
        batch_size=100,
        measurement_kind="rank-one",
        truncation=TruncationConfig(),
        shrinkage=ShrinkageConfig(),
    )
    with pytest.raises(DomainViolationError):
        predicted_error_floor(steep, 10, dist)

    trajectory = run_hetero_sgd(
        make_ground_truth(d=6, r1=1, r2=1, seed=2),
        dist,
        OptimizerConfig(eta=0.1, alpha=1e-2, batch_size=50, steps=2),
        seed=1,
    )
    assert np.isclose(
        trajectory.metadata["predicted_error_floor"],
        predicted_error_floor(trajectory.config, 6, dist),
    )
    assert trajectory.metadata["delta_cap"] is None


@pytest.mark.basic
def test_hetero_sgd_is_deterministic(model, dist):
    config = OptimizerConfig(eta=0.1, alpha=1e-2, batch_size=60, steps=5)
    a = run_hetero_sgd(model, dist, config, seed=7)
    b = run_hetero_sgd(model, dist, config, seed=7)
    c = run_hetero_sgd(model, dist, config, seed=8)
    assert a.steps == 5 and len(a.records) == 6
    assert [r.t for r in a.records] == list(range(6))
    assert a.records == b.records
    assert a.config_digest == b.config_digest
    assert np.array_equal(a.final_state.u, b.final_state.u)
    assert a.records[-1] != c.records[-1]
    assert a.final_state.step == 5


@pytest.mark.basic
def test_zero_step_size_keeps_the_iterate(model, dist):
    config = OptimizerConfig(eta=0.0, alpha=0.1, batch_size=20, steps=3)
    trajectory = run_hetero_sgd(model, dist, config, seed=1)
    assert np.array_equal(trajectory.final_state.u, 0.1 * np.eye(6))
    assert len({r.sigma1_r for r in trajectory.records}) == 1
    assert len({r.q_fro for r in trajectory.records}) == 1


@pytest.mark.basic
def test_zero_steps_gives_one_record(model, dist):
    config = OptimizerConfig(eta=0.1, alpha=0.1, batch_size=20, steps=0)
    trajectory = run_hetero_sgd(model, dist, config, seed=1)
    assert trajectory.steps == 0
    assert len(trajectory.records) == 1


@pytest.mark.basic
def test_distribution_rank_mismatch(model):
    config = OptimizerConfig(eta=0.1, alpha=0.1, batch_size=20, steps=1)
    with pytest.raises(DimensionError):
        run_hetero_sgd(model, EnvironmentDistribution.uniform_diagonal(1.0, r2=2), config, 1)


@pytest.mark.basic
def test_divergence_keeps_partial_trajectory(model, dist):
    config = OptimizerConfig(
        eta=50.0, alpha=0.5, batch_size=50, steps=20, divergence_threshold=5.0
    )
    with pytest.raises(DivergenceError) as excinfo:
        run_hetero_sgd(model, dist, config, seed=1)
    partial = excinfo.value.trajectory
    assert partial is not None
    assert 1 <= len(partial.records) < 21
    assert "diverged_at" in partial.metadata


@pytest.mark.basic
def test_plain_sensing_recovery():
    model = make_ground_truth(d=5, r1=1, r2=0, seed=1)
    dist = EnvironmentDistribution.uniform_diagonal(0.0, r2=0)
    config = OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=300)
    trajectory = run_hetero_sgd(model, dist, config, seed=1)
    assert trajectory.steps == 691
    assert trajectory.records[-1].recovery_error < 0.05
    assert trajectory.records[-1].q_fro == 0.0


@pytest.mark.basic
def test_pooled_gd(model, dist):
    envs = sample_environments(dist, 3, 1)
    config = OptimizerConfig(eta=0.1, alpha=1e-2, batch_size=80, steps=4)
    trajectory = run_pooled_gd(model, envs, config, seed=1)
    assert len(trajectory.records) == 5
    assert {r.env_id for r in trajectory.records} == {"pooled"}
    assert trajectory.metadata["n_environments"] == 3

    with pytest.raises(ConfigurationError):
        run_pooled_gd(model, [], config, seed=1)
    shrunk = OptimizerConfig(
        eta=0.1,
        alpha=1e-2,
        batch_size=80,
        steps=4,
        measurement_kind="rank-one",
        shrinkage=ShrinkageConfig(),
    )
    with pytest.raises(ConfigurationError):
        run_pooled_gd(model, envs, shrunk, seed=1)


@pytest.mark.basic
def test_pooled_environments_average_to_the_mean(dist):
    envs = pooled_environments(dist, 10, 3)
    assert len(envs) == 10
    mean = np.mean([env.sigma for env in envs], axis=0)
    assert np.allclose(mean, np.eye(1))
    assert len(pooled_environments(dist, 3, 3)) == 3


@pytest.mark.basic
def test_quadratic_sgd(model, dist):
    config = OptimizerConfig(
        eta=0.05,
        alpha=1e-2,
        batch_size=200,
        steps=3,
        measurement_kind="rank-one",
        truncation=TruncationConfig(),
        shrinkage=ShrinkageConfig(),
    )
    trajectory = run_quadratic_sgd(model, dist, config, seed=1)
    assert len(trajectory.records) == 4
    assert trajectory.metadata["runner"] == "quadratic"
    assert trajectory.metadata["truncation_radius"] > 0
    assert trajectory.metadata["delta_cap"] == DELTA_CAP
    assert np.isclose(trajectory.metadata["truncation_radius"], np.log(1 / DELTA_CAP))

    for bad in [
        OptimizerConfig(eta=0.05, alpha=1e-2, batch_size=20, steps=1),
        OptimizerConfig(
            eta=0.05,
            alpha=1e-2,
            batch_size=20,
            steps=1,
            measurement_kind="rank-one",
            shrinkage=ShrinkageConfig(),
        ),
        OptimizerConfig(
            eta=0.05,
            alpha=1e-2,
            batch_size=20,
            steps=1,
            measurement_kind="rank-one",
            truncation=TruncationConfig(),
        ),
    ]:
        with pytest.raises(ConfigurationError):
            run_quadratic_sgd(model, dist, bad, seed=1)


@pytest.mark.slow
@pytest.mark.skipif(
    " -m slow" not in " ".join(sys.argv),
    reason="Skip full scale runs by default, use '-m slow' to run them.",
)
def test_separation_hetero_against_pooled():
    # d / m small enough for the predicted error floor to sit below 0.15
    dist = EnvironmentDistribution.uniform_diagonal(10.0)
    config = OptimizerConfig(eta=0.1, alpha=1e-3, batch_size=8000)
    assert predicted_error_floor(config, 20, dist) < 0.1
    errors, pooled_errors = [], []
    for seed in [1, 2, 3]:
        model = make_ground_truth(d=20, r1=1, r2=1, seed=seed, orthogonal=True)
        hetero = run_hetero_sgd(model, dist, config, seed=seed)
        errors.append(hetero.records[-1].recovery_error)
        pooled = run_pooled_gd(model, pooled_environments(dist, 10, seed), config, seed=seed)
        pooled_errors.append(pooled.records[-1].recovery_error)
    assert np.median(errors) <= 0.15
    assert min(pooled_errors) >= 0.8


@pytest.mark.slow
@pytest.mark.skipif(
    " -m slow" not in " ".join(sys.argv),
    reason="Skip full scale runs by default, use '-m slow' to run them.",
)
def test_quadratic_recovery():
    dist = EnvironmentDistribution.uniform_diagonal(10.0)
    config = OptimizerConfig(
        eta=0.03,
        alpha=1e-3,
        batch_size=8000,
        measurement_kind="rank-one",
        truncation=TruncationConfig(radius_scale=4.0),
        shrinkage=ShrinkageConfig(tau_mode="oracle-trace"),
    )
    assert predicted_error_floor(config, 30, dist) < 0.15
    errors = []
    for seed in [1, 2, 3]:
        model = make_ground_truth(d=30, r1=1, r2=1, seed=seed, orthogonal=True)
        trajectory = run_quadratic_sgd(model, dist, config, seed=seed)
        errors.append(trajectory.records[-1].recovery_error)
    assert np.mean(errors) <= 0.2


@pytest.mark.slow
@pytest.mark.skipif(
    " -m slow" not in " ".join(sys.argv),
    reason="Skip full scale runs by default, use '-m slow' to run them.",
)
def test_quadratic_with_operator_norm_tau_collapses():
    model = make_ground_truth(d=20, r1=1, r2=1, seed=1, orthogonal=True)
    dist = EnvironmentDistribution.uniform_diagonal(10.0)
    config = OptimizerConfig(
        eta=0.03,
        alpha=1e-3,
        batch_size=2000,
        steps=500,
        measurement_kind="rank-one",
        truncation=TruncationConfig(radius_scale=4.0),
        shrinkage=ShrinkageConfig(tau_mode="oracle"),
    )
    trajectory = run_quadratic_sgd(model, dist, config, seed=1)
    assert trajectory.records[-1].sigma1_r < 0.1
