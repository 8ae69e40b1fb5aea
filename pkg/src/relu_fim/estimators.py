"""Estimator-style wrappers (fit/transform, get_params) around the functional API."""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .empirical import EmpiricalAccumulator, finalize_fim, relu_features
from .exceptions import DimensionError
from .spectrum import dense_spectrum, topk_spectrum
from .weights import generate_weights


class ReLUFeatureMap(TransformerMixin, BaseEstimator):
    """x -> relu(x W) with W drawn from N(0, scale) at fit time.

    ``fit`` only looks at the number of input columns.
    """

    def __init__(self, n_features: int = 100, seed: int = 0, scale: float | None = None):
        self.n_features = n_features
        self.seed = seed
        self.scale = scale

    def fit(self, X, y=None):
        X = check_array(X)
        self.weights_ = generate_weights(X.shape[1], self.n_features, self.seed, self.scale)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} input columns, got {X.shape[1]}")
        return relu_features(X, self.weights_)


class EmpiricalFisher(BaseEstimator):
    """Averages X^T X over feature rows; ``partial_fit`` streams more rows in."""

    def __init__(self, sigma2: float = 1.0, track_moments: bool = False):
        self.sigma2 = sigma2
        self.track_moments = track_moments

    def _acc(self, p):
        if not hasattr(self, "_accumulator"):
            self._accumulator = EmpiricalAccumulator(p, track_moments=self.track_moments)
        return self._accumulator

    def fit(self, X, y=None):
        if hasattr(self, "_accumulator"):
            del self._accumulator
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        X = check_array(X)
        self._acc(X.shape[1]).accumulate(X)
        K = finalize_fim(self._accumulator, self.sigma2)
        self.second_moment_ = K.values
        self.fisher_ = K.fim()
        self.n_samples_seen_ = self._accumulator.count
        self.n_features_in_ = X.shape[1]
        return self


class FisherSpectrum(TransformerMixin, BaseEstimator):
    """Eigen-decomposition of a symmetric matrix; ``transform`` projects onto the top eigenvectors."""

    def __init__(self, n_components: int | None = None, method: str = "dense", tol: float = 1e-10, seed: int = 0):
        self.n_components = n_components
        self.method = method
        self.tol = tol
        self.seed = seed

    def fit(self, J, y=None):
        J = check_array(J)
        if J.shape[0] != J.shape[1]:
            raise DimensionError(f"expected a square matrix, got {J.shape}")
        k = J.shape[0] if self.n_components is None else self.n_components
        if self.method == "dense":
            spec = dense_spectrum(J)
            self.eigenvalues_ = spec.eigenvalues[:k]
            self.components_ = spec.eigenvectors[:, :k].T
        else:
            spec = topk_spectrum(J, k, tol=self.tol, seed=self.seed, return_vectors=True)
            self.eigenvalues_ = spec.eigenvalues
            self.components_ = spec.eigenvectors.T
        self.n_features_in_ = J.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X)
        return X @ self.components_.T
