"""The second-moment matrix J = E[X^T X] of ReLU features.

Three constructions live here:

* :func:`closed_form_J` -- the arc-cosine expression
  ``J_ij = A_ij ((pi - theta_ij) cos theta_ij + sin theta_ij) / (2 pi)``;
* :func:`series_J` -- the power series in ``z_ij = cos theta_ij``,
  ``J_ij = A_ij/(2 pi) + W_i.W_j/4 + (W_i.W_j)^2/(4 pi A_ij) + R_ij``;
* :func:`expected_kernel_oracle` -- plain Monte Carlo over Gaussian inputs.

The series rests on ``f(z) = z arcsin z + sqrt(1 - z^2) = 1 + sum_n c_n z^(2n+2)``
with ``c_n = binom(2n, n) / (4^n (2n+1)(2n+2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._rng import ORACLE, GaussianStream
from .exceptions import DimensionError, DomainError
from .validation import (
    check_dense_cap,
    check_positive_int,
    check_seed,
    symmetrize_upper,
)
from .weights import ColumnGeometry, WeightMatrix, unit_cosines

CLOSED_FORM = "closed_form"
SERIES = "series"
EMPIRICAL = "empirical"
APPROX = "approx"
RESIDUAL = "residual"
PROVENANCES = (CLOSED_FORM, SERIES, EMPIRICAL, APPROX, RESIDUAL)

_HALF_PI_MINUS_ONE = math.pi / 2.0 - 1.0


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """A symmetric p x p matrix tagged with how it was produced.

    ``params`` carries provenance details: ``truncation`` and ``tail_bound``
    for series/residual matrices, ``n`` and ``sigma2`` for empirical ones.
    """

    values: np.ndarray
    provenance: str
    params: dict = field(default_factory=dict)
    d: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionError(f"kernel matrix must be square, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("kernel matrix has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def trace(self) -> float:
        return float(np.trace(self.values))

    def matmat(self, V: np.ndarray) -> np.ndarray:
        return self.values @ V

    def fim(self, sigma2: float | None = None) -> np.ndarray:
        """The Fisher information view ``J / sigma^2``."""
        sigma2 = self.params.get("sigma2", 1.0) if sigma2 is None else sigma2
        if sigma2 <= 0:
            raise DomainError("sigma2 must be > 0")
        return self.values / sigma2

    def run_id(self) -> tuple:
        return (self.d, self.p, self.seed)

    def sidecar(self) -> dict:
        return {"provenance": self.provenance, "d": self.d, "p": self.p, "seed": self.seed, **self.params}


# -- the scalar function f and its series ----------------------------------------


def series_coefficients(N: int) -> np.ndarray:
    """c_0..c_N, built from the ratio binom(2n,n)/4^n = prod (2k-1)/(2k)."""
    if N < 0:
        raise DomainError("series truncation must be >= 0")
    c = np.empty(N + 1)
    central = 1.0
    for n in range(N + 1):
        if n:
            central *= (2 * n - 1) / (2 * n)
        c[n] = central / ((2 * n + 1) * (2 * n + 2))
    return c


def _check_unit_interval(z):
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.abs(z) > 1.0) or np.any(np.isnan(z)):
        raise DomainError("f(z) is defined only for |z| <= 1")
    return z


def f_of_z(z):
    z = _check_unit_interval(z)
    out = z * np.arcsin(z) + np.sqrt(1.0 - z * z)
    return float(out) if out.ndim == 0 else out


def f_series(z, N: int):
    """1 + sum_{n=0}^{N} c_n z^(2n+2)."""
    z = _check_unit_interval(z)
    c = series_coefficients(N)
    z2 = z * z
    acc = np.zeros_like(z2)
    for cn in c[::-1]:
        acc = acc * z2 + cn
    out = 1.0 + acc * z2
    return float(out) if out.ndim == 0 else out


def tail_sum_at_one(N: int) -> float:
    """sum_{n>N} c_n, using sum_{n>=0} c_n = f(1) - 1 = pi/2 - 1.

    A few ulps are added so the value stays an upper bound despite the
    cancellation in the subtraction.
    """
    partial = math.fsum(series_coefficients(N))
    return max(_HALF_PI_MINUS_ONE - partial, 0.0) + 8.0 * np.finfo(float).eps


def series_tail_bound(z, N: int):
    """Upper bound on sum_{n>N} c_n z^(2n+2): every such power is <= |z|^(2N+4)."""
    z = np.abs(_check_unit_interval(z))
    out = z ** (2 * N + 4) * tail_sum_at_one(N)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SeriesSpec:
    """Truncation of the residual series: terms n = 1..truncation are kept."""

    truncation: int = 64
    tail_tol: float = 1e-12

    def __post_init__(self):
        if isinstance(self.truncation, bool) or int(self.truncation) != self.truncation or self.truncation < 0:
            raise DomainError("truncation must be a non-negative integer")
        if self.tail_tol <= 0:
            raise DomainError("tail_tol must be > 0")

    def truncation_for(self, z_abs: float, max_terms: int = 1_000_000) -> int:
        """Smallest N whose relative tail bound at |z| = z_abs is within tail_tol."""
        if z_abs >= 1.0:
            raise DomainError("the tail at |z| = 1 decays only like N^(-3/2); pick N explicitly")

        def ok(n):
            return series_tail_bound(z_abs, n) / (2 * math.pi) <= self.tail_tol

        hi = 1
        while not ok(hi):
            hi *= 2
            if hi > max_terms:
                raise DomainError(f"no truncation below {max_terms} meets tail_tol={self.tail_tol}")
        lo = hi // 2
        while lo < hi:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid + 1
        return hi


# -- matrices ----------------------------------------------------------------------


def arc_cosine(cos: np.ndarray, norm_products: np.ndarray) -> np.ndarray:
    """A (( pi - theta) cos theta + sin theta) / (2 pi), exact at cos = +-1."""
    cos = np.asarray(cos, dtype=np.float64)
    theta = np.arccos(cos)
    sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
    out = norm_products * ((np.pi - theta) * cos + sin) / (2.0 * np.pi)
    parallel = cos == 1.0
    if np.any(parallel):
        out[parallel] = 0.5 * np.broadcast_to(norm_products, out.shape)[parallel]
    out[cos == -1.0] = 0.0
    return out


def _meta(geom: ColumnGeometry) -> dict:
    return {"d": geom.d, "seed": geom.seed}


def closed_form_J(geom: ColumnGeometry) -> KernelMatrix:
    A = geom.norm_products()
    values = symmetrize_upper(arc_cosine(geom.unit_gram, A))
    np.fill_diagonal(values, 0.5 * geom.norms**2)
    return KernelMatrix(values, CLOSED_FORM, {}, **_meta(geom))


def _residual_sum(z: np.ndarray, N: int) -> np.ndarray:
    """sum_{n=1}^{N} c_n z^(2n+2), by Horner in z^2."""
    if N == 0:
        return np.zeros_like(z)
    c = series_coefficients(N)[1:]
    z2 = z * z
    acc = np.zeros_like(z2)
    for cn in c[::-1]:
        acc *= z2
        acc += cn
    return acc * z2 * z2


def rounding_allowance(N: int) -> float:
    """Relative a priori error of evaluating an N-term Horner sum plus the
    handful of leading terms in double precision."""
    return (2 * N + 16) * np.finfo(float).eps


def series_tail_bounds(geom: ColumnGeometry, N: int) -> np.ndarray:
    """Entrywise bound on |J_ij - series_J_ij| after N residual terms,
    including the floating-point evaluation allowance."""
    tail = series_tail_bound(geom.unit_gram, N) / (2.0 * np.pi)
    return geom.norm_products() * (tail + rounding_allowance(N))


def _tail_params(geom: ColumnGeometry, spec: SeriesSpec) -> dict:
    N = int(spec.truncation)
    bound_one = tail_sum_at_one(N) / (2.0 * np.pi)
    tail_bound = float(np.max(geom.norms) ** 2 * (bound_one + rounding_allowance(N)))
    if geom.p > 1:
        off = np.abs(geom.unit_gram[~np.eye(geom.p, dtype=bool)])
        offdiag_rel = float(np.max(off) ** (2 * N + 4) * bound_one)
    else:
        offdiag_rel = 0.0
    return {
        "truncation": N,
        "tail_bound": tail_bound,
        "offdiag_rel_tail": offdiag_rel,
        "meets_tail_tol": offdiag_rel <= spec.tail_tol,
    }


def series_J(geom: ColumnGeometry, spec: SeriesSpec | None = None) -> KernelMatrix:
    spec = SeriesSpec() if spec is None else spec
    A = geom.norm_products()
    z = geom.unit_gram
    dots = z * A
    values = A / (2 * np.pi) + dots / 4.0 + z * dots / (4 * np.pi)
    values += A * _residual_sum(z, spec.truncation) / (2 * np.pi)
    return KernelMatrix(symmetrize_upper(values), SERIES, _tail_params(geom, spec), **_meta(geom))


def residual_R(geom: ColumnGeometry, spec: SeriesSpec | None = None) -> KernelMatrix:
    """R_ij = (1/(2 pi)) sum_{n=1}^{N} c_n (W_i.W_j)^(2n+2) / A_ij^(2n+1).

    Each term is a Hadamard power of the unit Gram matrix times a rank-one
    PSD matrix, so R is PSD for every truncation.
    """
    spec = SeriesSpec() if spec is None else spec
    A = geom.norm_products()
    values = A * _residual_sum(geom.unit_gram, spec.truncation) / (2 * np.pi)
    return KernelMatrix(symmetrize_upper(values), RESIDUAL, _tail_params(geom, spec), **_meta(geom))


class ClosedFormOperator:
    """Matrix-free closed-form J: rows are generated in blocks on demand.

    Used when p is too large to hold J densely; each product costs O(p^2 d)
    plus O(p^2 k) for k right-hand sides, with O(block * p) memory.
    """

    def __init__(self, W: WeightMatrix, block: int = 512):
        self.W = W
        self.block = check_positive_int(block, "block")
        self.norms = W.column_norms()
        if np.any(self.norms == 0):
            raise DomainError("W has a zero column")
        self.d = W.d
        self.seed = W.seed

    @property
    def p(self) -> int:
        return self.W.p

    @property
    def shape(self) -> tuple[int, int]:
        return (self.p, self.p)

    def run_id(self) -> tuple:
        return self.W.run_id()

    def trace(self) -> float:
        return float(0.5 * np.sum(self.norms**2))

    def row_block(self, start: int, stop: int) -> np.ndarray:
        E = self.W.entries
        cos = unit_cosines(E[:, start:stop], self.norms[start:stop], E, self.norms)
        rows = arc_cosine(cos, np.outer(self.norms[start:stop], self.norms))
        idx = np.arange(start, stop)
        rows[idx - start, idx] = 0.5 * self.norms[start:stop] ** 2
        return rows

    def matmat(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=np.float64)
        vec = V.ndim == 1
        V2 = V[:, None] if vec else V
        if V2.shape[0] != self.p:
            raise DimensionError(f"operand has {V2.shape[0]} rows, operator is {self.p}x{self.p}")
        out = np.empty((self.p, V2.shape[1]))
        for start in range(0, self.p, self.block):
            stop = min(start + self.block, self.p)
            out[start:stop] = self.row_block(start, stop) @ V2
        return out[:, 0] if vec else out

    def dense(self, dense_cap: int | None = None) -> KernelMatrix:
        check_dense_cap(self.p, dense_cap)
        values = np.empty((self.p, self.p))
        for start in range(0, self.p, self.block):
            stop = min(start + self.block, self.p)
            values[start:stop] = self.row_block(start, stop)
        return KernelMatrix(symmetrize_upper(values), CLOSED_FORM, {}, d=self.d, seed=self.seed)


# -- Monte Carlo oracle --------------------------------------------------------------


class OracleEstimate(NamedTuple):
    mean: float
    stderr: float
    samples: int


def expected_kernel_oracle(u, v, samples: int, seed: int = 0, workers: int = 1, batch: int = 1 << 16) -> OracleEstimate:
    """Monte Carlo estimate of E[relu(x.u) relu(x.v)] for x ~ N(0, I_d).

    Samples are split across ``workers`` substreams of the oracle seed
    domain and merged in ascending worker order.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError("u and v must have the same length")
    if not np.any(u) or not np.any(v):
        raise DomainError("oracle vectors must be nonzero")
    samples = check_positive_int(samples, "samples")
    workers = check_positive_int(workers, "workers")
    seed = check_seed(seed)
    d = u.size
    UV = np.stack([u, v], axis=1)

    total = 0.0
    total_sq = 0.0
    shares = _split(samples, workers)
    for worker, share in enumerate(shares):
        stream = GaussianStream(seed, ORACLE, worker)
        done = 0
        while done < share:
            m = min(batch, share - done)
            proj = stream.normal((m, d)) @ UV
            np.maximum(proj, 0.0, out=proj)
            prod = proj[:, 0] * proj[:, 1]
            total += math.fsum(prod)
            total_sq += math.fsum(prod * prod)
            done += m
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    stderr = math.sqrt(var / max(samples - 1, 1))
    return OracleEstimate(mean, stderr, samples)


def _split(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if w < extra else 0) for w in range(k)]
