import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from relu_fim import closed_form_J, column_geometry, dense_spectrum
from relu_fim.estimators import EmpiricalFisher, FisherSpectrum, ReLUFeatureMap


def test_feature_map_params_and_transform():
    fm = ReLUFeatureMap(n_features=20, seed=3)
    assert fm.get_params() == {"n_features": 20, "seed": 3, "scale": None}
    assert clone(fm).get_params() == fm.get_params()
    with pytest.raises(NotFittedError):
        fm.transform(np.zeros((1, 4)))
    X = np.random.default_rng(0).normal(size=(30, 4))
    Z = fm.fit_transform(X)
    assert Z.shape == (30, 20) and np.all(Z >= 0)
    np.testing.assert_array_equal(Z, np.maximum(X @ fm.weights_.entries, 0))


def test_empirical_fisher_streaming():
    rng = np.random.default_rng(1)
    X = np.maximum(rng.normal(size=(100, 5)), 0)
    full = EmpiricalFisher(sigma2=2.0).fit(X)
    part = EmpiricalFisher(sigma2=2.0).partial_fit(X[:40]).partial_fit(X[40:])
    np.testing.assert_allclose(part.second_moment_, full.second_moment_, rtol=1e-12)
    np.testing.assert_allclose(full.fisher_, X.T @ X / 100 / 2.0, rtol=1e-12)
    assert part.n_samples_seen_ == 100
    refit = full.fit(X[:10])
    assert refit.n_samples_seen_ == 10


def test_spectrum_transform(small_weights):
    J = closed_form_J(column_geometry(small_weights)).values
    est = FisherSpectrum(n_components=11).fit(J)
    ref = dense_spectrum(J)
    np.testing.assert_allclose(est.eigenvalues_, ref.eigenvalues[:11])
    assert est.transform(np.eye(50)).shape == (50, 11)
    lan = FisherSpectrum(n_components=11, method="lanczos").fit(J)
    np.testing.assert_allclose(lan.eigenvalues_, ref.eigenvalues[:11], rtol=1e-8)


def test_pipeline_end_to_end():
    X = np.random.default_rng(2).normal(size=(2000, 6))
    feats = make_pipeline(ReLUFeatureMap(n_features=15, seed=1)).fit_transform(X)
    fisher = EmpiricalFisher().fit(feats)
    assert fisher.second_moment_.shape == (15, 15)
