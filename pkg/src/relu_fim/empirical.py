"""Sampled ReLU features and the empirical matrix J^(n) = (1/n) sum_t X_t^T X_t."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Iterator

import numpy as np

from ._rng import FEATURES, GaussianStream
from .exceptions import DimensionError, DomainError
from .kernel import EMPIRICAL, KernelMatrix
from .validation import check_dense_cap, check_positive_int, check_positive_real, check_seed, symmetrize_upper
from .weights import WeightMatrix


def relu_features(x: np.ndarray, W: WeightMatrix | np.ndarray) -> np.ndarray:
    """X = relu(x W) for a single input or a batch of inputs (rows)."""
    entries = W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=np.float64)
    return np.maximum(np.asarray(x, dtype=np.float64) @ entries, 0.0)


class FeatureSampler:
    """Draws x ~ N(0, I_d) from a seeded stream and emits relu(x W).

    The input stream is split-invariant, so the sequence of features does not
    depend on ``batch``.
    """

    def __init__(self, W: WeightMatrix, seed: int = 0, batch: int = 4096, worker: int = 0):
        self.W = W
        self.seed = check_seed(seed)
        self.batch = check_positive_int(batch, "batch")
        self._stream = GaussianStream(self.seed, FEATURES, worker)

    def batches(self, count: int) -> Iterator[np.ndarray]:
        count = check_positive_int(count, "count")
        done = 0
        while done < count:
            m = min(self.batch, count - done)
            x = self._stream.normal((m, self.W.d))
            yield relu_features(x, self.W)
            done += m

    def sample_features(self, count: int) -> Iterator[np.ndarray]:
        for block in self.batches(count):
            yield from block


def sample_features(sampler: FeatureSampler, count: int) -> Iterator[np.ndarray]:
    return sampler.sample_features(count)


class EmpiricalAccumulator:
    """Running sum of X^T X over feature vectors.

    With ``track_moments`` the sum of squared products (X_i X_j)^2 is kept as
    well, which gives per-entry standard errors of J^(n). ``compensated``
    switches the batch-level additions to Kahan summation.
    """

    def __init__(self, p: int, seed: int | None = None, track_moments: bool = False,
                 compensated: bool = False, dense_cap: int | None = None):
        self.p = check_positive_int(p, "p")
        check_dense_cap(self.p, dense_cap)
        self.seed = seed
        self.track_moments = track_moments
        self.compensated = compensated
        self.sum = np.zeros((self.p, self.p))
        self.sum_sq = np.zeros((self.p, self.p)) if track_moments else None
        self.count = 0
        self._comp = np.zeros((self.p, self.p)) if compensated else None
        self._comp_sq = np.zeros((self.p, self.p)) if (compensated and track_moments) else None

    def _add(self, target, update, comp):
        if comp is None:
            target += update
            return
        y = update - comp
        t = target + y
        comp[...] = (t - target) - y
        target[...] = t

    def accumulate(self, X: np.ndarray) -> "EmpiricalAccumulator":
        """Add one feature vector (length p) or a batch of them (n x p)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.p:
            raise DimensionError(f"expected feature vectors of length {self.p}, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DomainError("feature vectors must be finite")
        self._add(self.sum, X.T @ X, self._comp)
        if self.track_moments:
            X2 = X * X
            self._add(self.sum_sq, X2.T @ X2, self._comp_sq)
        self.count += X.shape[0]
        return self

    def merge(self, other: "EmpiricalAccumulator") -> "EmpiricalAccumulator":
        if other.p != self.p:
            raise DimensionError("cannot merge accumulators of different size")
        self._add(self.sum, other.sum, self._comp)
        if self.track_moments:
            if not other.track_moments:
                raise DomainError("cannot merge an accumulator without moments into one with moments")
            self._add(self.sum_sq, other.sum_sq, self._comp_sq)
        self.count += other.count
        return self

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise DomainError("no samples accumulated")
        return symmetrize_upper(self.sum / self.count)

    def standard_errors(self) -> np.ndarray:
        """Per-entry standard error of the sample mean of X_i X_j."""
        if not self.track_moments:
            raise DomainError("accumulator was created without track_moments")
        if self.count < 2:
            raise DomainError("need at least two samples for standard errors")
        n = self.count
        mean = self.sum / n
        var = np.maximum(self.sum_sq / n - mean * mean, 0.0) * n / (n - 1)
        return symmetrize_upper(np.sqrt(var / n))

    def finalize_fim(self, sigma2: float = 1.0, **meta) -> KernelMatrix:
        return finalize_fim(self, sigma2, **meta)


def accumulate(acc: EmpiricalAccumulator, X: np.ndarray) -> EmpiricalAccumulator:
    return acc.accumulate(X)


def finalize_fim(acc: EmpiricalAccumulator, sigma2: float = 1.0, d: int | None = None,
                 seed: int | None = None, workers: int = 1) -> KernelMatrix:
    """J^(n) tagged with (n, sigma2); ``KernelMatrix.fim()`` gives J^(n)/sigma2.

    ``d`` and ``seed`` identify the weights the features came from; the
    sampling seed is kept in ``params["sample_seed"]``.
    """
    sigma2 = check_positive_real(sigma2, "sigma2")
    if acc.count == 0:
        raise DomainError("cannot finalize an empty accumulator")
    params = {"n": acc.count, "sigma2": sigma2, "workers": workers, "sample_seed": acc.seed}
    return KernelMatrix(acc.mean(), EMPIRICAL, params, d=d, seed=seed)


def _split(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if w < extra else 0) for w in range(k)]


def empirical_accumulator(W: WeightMatrix, n: int, seed: int = 0, workers: int = 1, threads: int = 1,
                          batch: int = 4096, track_moments: bool = False, compensated: bool = False,
                          dense_cap: int | None = None) -> EmpiricalAccumulator:
    """Accumulate n samples sharded over ``workers`` deterministic substreams.

    Worker w draws from substream (seed, w); shards are merged in ascending
    worker order whatever ``threads`` is, so results do not depend on it.
    """
    n = check_positive_int(n, "n")
    workers = check_positive_int(workers, "workers")
    shares = _split(n, workers)

    def run(worker: int) -> EmpiricalAccumulator:
        acc = EmpiricalAccumulator(W.p, seed=seed, track_moments=track_moments,
                                   compensated=compensated, dense_cap=dense_cap)
        if shares[worker]:
            sampler = FeatureSampler(W, seed=seed, batch=batch, worker=worker)
            for block in sampler.batches(shares[worker]):
                acc.accumulate(block)
        return acc

    if threads > 1 and workers > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(workers)))
    else:
        parts = [run(w) for w in range(workers)]
    total = parts[0]
    for part in parts[1:]:
        total.merge(part)
    return total


def empirical_J(W: WeightMatrix, n: int, seed: int = 0, sigma2: float = 1.0, workers: int = 1, **kwargs) -> KernelMatrix:
    acc = empirical_accumulator(W, n, seed=seed, workers=workers, **kwargs)
    return finalize_fim(acc, sigma2, d=W.d, seed=W.seed, workers=workers)
