import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relu_fim import (
    DomainError,
    EmpiricalAccumulator,
    FeatureSampler,
    WeightMatrix,
    closed_form_J,
    column_geometry,
    empirical_J,
    finalize_fim,
    generate_weights,
    relu_features,
)
from relu_fim.empirical import accumulate, empirical_accumulator, sample_features
from relu_fim.exceptions import DenseCapError, DimensionError


def test_scalar_relu():
    W = WeightMatrix(np.array([[1.0]]))
    assert relu_features(np.array([2.0]), W).tolist() == [2.0]
    assert relu_features(np.array([-2.0]), W).tolist() == [0.0]


def test_all_negative_projections_give_zero():
    W = WeightMatrix(np.array([[1.0, 2.0, 0.5], [1.0, 0.1, 3.0]]))
    assert not np.any(relu_features(np.array([-1.0, -1.0]), W))


def test_half_of_features_are_zero():
    W = generate_weights(10, 100, seed=1)
    X = np.concatenate(list(FeatureSampler(W, seed=2).batches(100_000)))
    assert X.shape == (100_000, 100)
    assert abs(np.mean(X == 0) - 0.5) < 0.01


def test_single_outer_product():
    acc = accumulate(EmpiricalAccumulator(2), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(acc.mean(), [[1.0, 2.0], [2.0, 4.0]])
    acc.accumulate(np.zeros(2))
    assert acc.count == 2
    np.testing.assert_array_equal(acc.sum, [[1.0, 2.0], [2.0, 4.0]])


def test_accumulator_errors():
    acc = EmpiricalAccumulator(3)
    with pytest.raises(DomainError):
        acc.mean()
    with pytest.raises(DimensionError):
        acc.accumulate(np.ones(2))
    with pytest.raises(DomainError):
        acc.accumulate(np.array([1.0, np.inf, 0.0]))
    with pytest.raises(DomainError):
        acc.standard_errors()
    with pytest.raises(DenseCapError):
        EmpiricalAccumulator(50, dense_cap=10)
    with pytest.raises(DomainError):
        finalize_fim(acc)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=5))
def test_batch_split_does_not_change_the_sum(chunks):
    rng = np.random.default_rng(sum(chunks))
    X = np.maximum(rng.normal(size=(sum(chunks), 6)), 0)
    whole = EmpiricalAccumulator(6).accumulate(X)
    parts = EmpiricalAccumulator(6)
    start = 0
    for c in chunks:
        parts.accumulate(X[start:start + c])
        start += c
    np.testing.assert_allclose(parts.sum, whole.sum, rtol=1e-10, atol=1e-12)
    assert parts.count == whole.count


def test_sampler_stream_independent_of_batch_size():
    W = generate_weights(4, 6, seed=3)
    a = np.stack(list(sample_features(FeatureSampler(W, seed=9, batch=7), 50)))
    b = np.concatenate(list(FeatureSampler(W, seed=9, batch=50).batches(50)))
    np.testing.assert_array_equal(a, b)


def test_standard_errors_match_numpy():
    rng = np.random.default_rng(0)
    X = np.maximum(rng.normal(size=(500, 4)), 0)
    acc = EmpiricalAccumulator(4, track_moments=True).accumulate(X[:200]).accumulate(X[200:])
    prods = X[:, :, None] * X[:, None, :]
    expected = prods.std(axis=0, ddof=1) / np.sqrt(500)
    np.testing.assert_allclose(acc.standard_errors(), expected, rtol=1e-9)


def test_compensated_matches_plain_closely():
    W = generate_weights(5, 8, seed=1)
    plain = empirical_accumulator(W, 20_000, seed=4, batch=100)
    comp = empirical_accumulator(W, 20_000, seed=4, batch=100, compensated=True)
    np.testing.assert_allclose(plain.mean(), comp.mean(), rtol=1e-12)


def test_merge_in_worker_order_is_thread_independent():
    W = generate_weights(5, 8, seed=1)
    a = empirical_J(W, 5003, seed=2, workers=4, threads=1)
    b = empirical_J(W, 5003, seed=2, workers=4, threads=4)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.params["n"] == 5003 and a.params["workers"] == 4


def test_fim_scaling_and_metadata():
    W = generate_weights(5, 8, seed=1)
    K = empirical_J(W, 2000, seed=2, sigma2=4.0)
    assert K.provenance == "empirical"
    assert K.run_id() == W.run_id()
    assert K.params["sample_seed"] == 2
    np.testing.assert_array_equal(K.fim(), K.values / 4.0)
    np.testing.assert_allclose(np.linalg.eigvalsh(K.fim()), np.linalg.eigvalsh(K.values) / 4, rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(empirical_J(W, 2000, seed=2, sigma2=1.0).fim(), K.values)


def test_empirical_matches_closed_form_within_standard_errors(small_weights):
    acc = empirical_accumulator(small_weights, 100_000, seed=3, track_moments=True)
    J = closed_form_J(column_geometry(small_weights)).values
    assert np.abs(acc.mean() - J).max() <= 5 * acc.standard_errors().max()


def test_trace_converges_to_half_sum_of_row_norms(small_weights):
    n = 100_000
    acc = empirical_accumulator(small_weights, n, seed=5)
    # trace of J^(n) is the mean of |X|^2; its standard error from a second pass
    X = np.concatenate(list(FeatureSampler(small_weights, seed=5).batches(n)))
    sq = np.sum(X * X, axis=1)
    se = sq.std(ddof=1) / np.sqrt(n)
    target = 0.5 * small_weights.row_norms_sq().sum()
    assert np.trace(acc.mean()) == pytest.approx(sq.mean(), rel=1e-10)
    assert abs(sq.mean() - target) <= 5 * se


def test_empirical_is_symmetric_psd(small_weights):
    K = empirical_J(small_weights, 30, seed=1)
    assert np.array_equal(K.values, K.values.T)
    assert np.linalg.eigvalsh(K.values).min() >= -1e-12 * K.trace()
