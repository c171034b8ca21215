import os
import sys

import numpy as np
import pytest

os.environ["HETSENSE_TYPECHECKING"] = "crash"

from hetsense.utils.errors import DimensionError
from hetsense.utils.misc import make_rng
from hetsense.utils.rip import (
    LEMMA_STATEMENTS,
    angle_exceedance_fraction,
    check_rip_lemma_bounds,
    estimate_rip_delta,
    lemma_ratios,
    rip_error_operator,
    rip_quadratic_form,
    sample_test_matrix,
    subspace_angle,
)
from hetsense.utils.sensing import (
    EnvironmentDistribution,
    OrthonormalBasis,
    generate_gaussian_batch,
    generate_rank_one_batch,
    make_ground_truth,
    make_orthonormal_basis,
    sample_environment,
)


def _batch(d: int, m: int, seed: int = 1, kind: str = "gaussian"):
    model = make_ground_truth(d=d, r1=1, r2=1, seed=seed)
    env = sample_environment(EnvironmentDistribution.uniform_diagonal(2.0), seed)
    if kind == "gaussian":
        return generate_gaussian_batch(model, env, m, seed=seed)
    return generate_rank_one_batch(model, env, m, seed=seed)


@pytest.mark.basic
def test_sample_test_matrix():
    rng = make_rng(3)
    for r in [1, 2, 3]:
        mat = sample_test_matrix(rng, 7, r)
        assert np.allclose(mat, mat.T)
        assert np.isclose(np.linalg.norm(mat), 1.0)
        assert np.linalg.matrix_rank(mat, tol=1e-10) <= r


@pytest.mark.basic
def test_error_operator_matches_quadratic_form():
    batch = _batch(d=6, m=500)
    mat = sample_test_matrix(make_rng(0), 6, 2)
    err = rip_error_operator(batch, mat)
    lhs = float(np.sum(err * mat))
    rhs = rip_quadratic_form(batch, mat) - float(np.sum(mat * mat))
    assert np.isclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    dense = batch.dense_matrices()
    inner = np.einsum("ipq,pq->i", dense, mat)
    expected = np.einsum("i,ipq->pq", inner, dense) / batch.m - mat
    assert np.allclose(err, expected, atol=1e-10)


@pytest.mark.basic
def test_error_operator_dimension_mismatch():
    batch = _batch(d=5, m=50)
    with pytest.raises(DimensionError):
        rip_error_operator(batch, np.eye(4))
    with pytest.raises(DimensionError):
        rip_quadratic_form(batch, np.eye(6))


@pytest.mark.basic
def test_quadratic_form_concentrates():
    batch = _batch(d=5, m=4000)
    mat = sample_test_matrix(make_rng(1), 5, 2)
    assert abs(rip_quadratic_form(batch, mat) - 1.0) < 0.15


@pytest.mark.basic
def test_estimate_rip_delta_is_deterministic_and_shrinks_with_m():
    small = _batch(d=6, m=200)
    large = _batch(d=6, m=4000)
    a = estimate_rip_delta(small, r=2, trials=20, seed=5)
    b = estimate_rip_delta(small, r=2, trials=20, seed=5)
    assert a.delta_hat == b.delta_hat
    assert a.worst_case_matrix_digest == b.worst_case_matrix_digest
    assert a.reference == "isometry"
    assert a.rank_tested == 2
    c = estimate_rip_delta(large, r=2, trials=20, seed=5)
    assert 0 < c.delta_hat < a.delta_hat


@pytest.mark.basic
def test_estimate_rip_delta_refinement_does_not_decrease():
    batch = _batch(d=6, m=300)
    plain = estimate_rip_delta(batch, r=2, trials=10, seed=2, refine_steps=0)
    refined = estimate_rip_delta(batch, r=2, trials=10, seed=2, refine_steps=10)
    assert refined.delta_hat >= plain.delta_hat


@pytest.mark.basic
def test_rank_one_reference():
    batch = _batch(d=5, m=4000, kind="rank-one")
    estimate = estimate_rip_delta(batch, r=2, trials=20, seed=1)
    assert estimate.reference == "rank-one"
    # around 2||M||^2 + tr(M)^2 the rank-one family concentrates
    assert estimate.delta_hat < 2.0


@pytest.mark.basic
def test_lemma_ratios_zero_matrix():
    batch = _batch(d=4, m=100)
    zero = np.zeros((4, 4))
    ratios = lemma_ratios(batch, 0.1, zero, np.eye(4), zero, np.eye(4))
    assert set(ratios) == set(LEMMA_STATEMENTS)
    assert all(value == 0.0 for value in ratios.values())


@pytest.mark.basic
def test_lemma_bounds_hold_at_estimate():
    batch = _batch(d=8, m=3000)
    estimate = estimate_rip_delta(batch, r=4, trials=200, seed=3)
    report = check_rip_lemma_bounds(
        batch, estimate.delta_hat + 0.05, trials=20, seed=4, rank=2
    )
    assert report.passed, report.to_markdown()
    assert len(report.rows) == 4
    assert "low-rank-inner" in report.to_markdown()


@pytest.mark.basic
def test_lemma_bounds_flag_tiny_delta():
    batch = _batch(d=6, m=200)
    report = check_rip_lemma_bounds(batch, 1e-6, trials=5, seed=1)
    assert not report.passed
    assert all(row.violations == 5 for row in report.rows)


@pytest.mark.basic
def test_subspace_angle():
    b = make_orthonormal_basis(10, 2, seed=1)
    assert np.isclose(subspace_angle(b, b), 1.0)
    e = np.eye(10)
    assert subspace_angle(OrthonormalBasis(e[:, :2]), OrthonormalBasis(e[:, 2:4])) == 0.0
    with pytest.raises(DimensionError):
        subspace_angle(b, make_orthonormal_basis(9, 2, seed=1))


@pytest.mark.basic
def test_angle_exceedance_fraction():
    assert angle_exceedance_fraction(100, 1, 1, trials=500, seed=1) <= 0.01
    # every angle is positive
    assert angle_exceedance_fraction(20, 1, 1, trials=50, seed=1, t=0.0) == 1.0


@pytest.mark.slow
@pytest.mark.skipif(
    " -m slow" not in " ".join(sys.argv),
    reason="Skip full scale runs by default, use '-m slow' to run them.",
)
def test_lemma_bounds_full_scale():
    batch = _batch(d=20, m=4000)
    estimate = estimate_rip_delta(batch, r=4, trials=200, seed=1)
    report = check_rip_lemma_bounds(batch, estimate.delta_hat + 0.05, trials=200, seed=2, rank=2)
    assert report.passed, report.to_markdown()
    assert angle_exceedance_fraction(100, 1, 1, trials=10_000, seed=1) <= 0.01
