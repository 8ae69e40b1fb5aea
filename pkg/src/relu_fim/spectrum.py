"""Eigenvalues of J, their grouping, and eigenspace alignment with V."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from ._rng import LANCZOS, PROBES, GaussianStream
from .exceptions import ConvergenceError, DimensionError, DomainError
from .validation import check_positive_int, check_seed, check_symmetric

SCHEMA_VERSION = 1


def predicted_levels(d: int) -> tuple[float, float, float]:
    return ((2 * d + 1) / (4 * np.pi), 0.25, 1.0 / (2 * np.pi * d))


def group_sizes(d: int) -> tuple[int, int, int]:
    return (1, d, d * (d + 1) // 2 - 1)


# -- linear operators ----------------------------------------------------------------


class _Operator:
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], p: int):
        self.fn = fn
        self.p = p
        self.shape = (p, p)

    def matmat(self, V):
        return self.fn(V)


def as_operator(A, p: int | None = None):
    """Wrap an ndarray, KernelMatrix, matrix-free operator, or callable."""
    if hasattr(A, "matmat") and hasattr(A, "shape"):
        return A
    if callable(A):
        if p is None:
            raise DimensionError("p is required for a callable operator")
        return _Operator(A, p)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"operator must be square, got {A.shape}")
    return _Operator(lambda V: A @ V, A.shape[0])


# -- dense path ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DenseSpectrum:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, same order
    reconstruction_residual: float | None = None


def dense_spectrum(J, verify: bool | None = None) -> DenseSpectrum:
    """Full symmetric eigendecomposition, sorted descending.

    ``verify`` checks max |J - Q diag(lam) Q^T| <= 1e-8 max |J|; by default
    only for p <= 4000, where the extra O(p^3) product is cheap.
    """
    values = J.values if hasattr(J, "values") else np.asarray(J, dtype=np.float64)
    values = check_symmetric(values, "J")
    if values.shape[0] == 0:
        raise DimensionError("empty matrix")
    lam, Q = np.linalg.eigh(values)
    lam = lam[::-1].copy()
    Q = Q[:, ::-1].copy()
    residual = None
    if verify is None:
        verify = values.shape[0] <= 4000
    if verify:
        scale = np.max(np.abs(values))
        residual = float(np.max(np.abs(values - (Q * lam) @ Q.T)))
        if residual > 1e-8 * max(scale, np.finfo(float).tiny):
            raise ConvergenceError(f"eigendecomposition residual {residual:.3e} too large", lam)
    return DenseSpectrum(lam, Q, residual)


# -- Lanczos -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TopKSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    residuals: np.ndarray
    iterations: int


def _probe_symmetry(op, p: int, tol: float, seed: int) -> None:
    stream = GaussianStream(seed, PROBES)
    u = stream.draw(p)
    v = stream.draw(p)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    uAv = float(u @ op.matmat(v))
    vAu = float(v @ op.matmat(u))
    if abs(uAv - vAu) > tol * max(1.0, abs(uAv), abs(vAu)):
        raise DomainError(f"operator is not symmetric: u.Av - v.Au = {uAv - vAu:.3e}")


def topk_spectrum(apply, k: int, p: int | None = None, tol: float = 1e-10, seed: int = 0,
                  max_iter: int | None = None, return_vectors: bool = False,
                  check_every: int = 10) -> TopKSpectrum:
    """Largest k eigenvalues of a symmetric operator by Lanczos.

    Every new Lanczos vector is reorthogonalized twice against all previous
    ones. On an invariant subspace the recurrence restarts from a fresh
    random vector orthogonal to the current basis. A Ritz pair counts as
    converged when ||A y - theta y|| <= tol |theta| + 64 eps ||A||.
    """
    op = as_operator(apply, p)
    p = op.shape[0]
    k = check_positive_int(k, "k")
    if k > p:
        raise DomainError(f"k={k} exceeds the dimension p={p}")
    seed = check_seed(seed)
    _probe_symmetry(op, p, tol, seed)
    m_max = p if max_iter is None else min(int(max_iter), p)
    if m_max < k:
        raise DomainError("max_iter must be at least k")

    stream = GaussianStream(seed, LANCZOS)
    Q = np.zeros((p, m_max))
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)  # beta[j] couples q_j and q_{j+1}

    def fresh(m):
        for _ in range(5):
            r = stream.draw(p)
            if m:
                r -= Q[:, :m] @ (Q[:, :m].T @ r)
                r -= Q[:, :m] @ (Q[:, :m].T @ r)
            nr = np.linalg.norm(r)
            if nr > 1e-8 * np.sqrt(p):
                return r / nr
        raise ConvergenceError("could not draw a new direction outside the Krylov basis")

    Q[:, 0] = fresh(0)
    best = None
    theta = S = None
    m = 0
    while m < m_max:
        q = Q[:, m]
        w = op.matmat(q)
        alpha[m] = q @ w
        w -= alpha[m] * q
        if m:
            w -= beta[m - 1] * Q[:, m - 1]
        w -= Q[:, : m + 1] @ (Q[:, : m + 1].T @ w)
        w -= Q[:, : m + 1] @ (Q[:, : m + 1].T @ w)
        b = np.linalg.norm(w)
        m += 1
        scale = max(np.max(np.abs(alpha[:m])), np.finfo(float).tiny)
        invariant = b <= 1e-12 * scale
        beta[m - 1] = 0.0 if invariant else b

        if m >= k and (m % check_every == 0 or m == m_max or invariant or m == k):
            theta, S = scipy.linalg.eigh_tridiagonal(alpha[:m], beta[: m - 1])
            top = np.argsort(theta)[::-1][:k]
            res = np.abs(beta[m - 1] * S[m - 1, top])
            norm_est = np.max(np.abs(theta))
            limit = tol * np.abs(theta[top]) + 64 * np.finfo(float).eps * norm_est
            best = theta[top]
            if np.all(res <= limit) or m == m_max:
                Y = Q[:, :m] @ S[:, top]
                true_res = np.linalg.norm(op.matmat(Y) - Y * theta[top], axis=0)
                if np.all(true_res <= limit):
                    return TopKSpectrum(theta[top].copy(), Y if return_vectors else None, true_res, m)
                if m == m_max:
                    break
        if m < m_max:
            Q[:, m] = fresh(m) if invariant else w / b
    raise ConvergenceError(f"Lanczos did not converge in {m_max} iterations", best)


# -- grouping -------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupStats:
    group: int
    size: int
    mean: float
    min: float
    max: float
    predicted: float | None


@dataclass(frozen=True, eq=False)
class GroupAnalysis:
    d: int
    stats: list[GroupStats]
    gap_ratios: list[float | None]
    labels: np.ndarray  # group id per eigenvalue, 4 = beyond the predicted groups


def group_analysis(eigenvalues, d: int) -> GroupAnalysis:
    """Partition a descending spectrum at the fixed counts 1 | d | d(d+1)/2-1 | rest.

    ``gap_ratios[g]`` is lam[last of group g] / lam[first after group g].
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    d = check_positive_int(d, "d")
    sizes = group_sizes(d)
    needed = sum(sizes)
    if lam.size < needed:
        raise DomainError(f"need at least {needed} eigenvalues for d={d}, got {lam.size}")
    if np.any(np.diff(lam) > 0):
        raise DomainError("eigenvalues must be sorted in descending order")
    levels = predicted_levels(d)
    labels = np.full(lam.size, 4, dtype=int)
    stats, gaps = [], []
    start = 0
    for g, (size, level) in enumerate(zip(sizes, levels), start=1):
        stop = start + size
        labels[start:stop] = g
        block = lam[start:stop]
        if size:
            stats.append(GroupStats(g, size, float(block.mean()), float(block.min()), float(block.max()), level))
        else:
            stats.append(GroupStats(g, 0, float("nan"), float("nan"), float("nan"), level))
        if size and stop < lam.size and lam[stop] != 0:
            gaps.append(float(lam[stop - 1] / lam[stop]))
        else:
            gaps.append(None)
        start = stop
    if start < lam.size:
        rest = lam[start:]
        stats.append(GroupStats(4, rest.size, float(rest.mean()), float(rest.min()), float(rest.max()), None))
    return GroupAnalysis(d, stats, gaps, labels)


# -- principal angles ----------------------------------------------------------------


def _orthonormal_columns(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    Q, R, _ = scipy.linalg.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return Q[:, :0]
    rank = int(np.sum(diag > rtol * diag[0]))
    return Q[:, :rank]


def principal_angles(eig_block, predicted) -> np.ndarray:
    """Principal angles (ascending, radians) between span(eig_block columns)
    and span(predicted rows).

    Cosines come from the SVD of Qa^T Qb, sines from the SVD of the part of
    one basis outside the other; the sine branch is used for angles below
    pi/4, where arccos loses accuracy.
    """
    A = np.asarray(eig_block, dtype=np.float64)
    A = A[:, None] if A.ndim == 1 else A
    P = np.asarray(predicted, dtype=np.float64)
    P = P[None, :] if P.ndim == 1 else P
    if P.shape[1] != A.shape[0]:
        raise DimensionError(f"predicted vectors have length {P.shape[1]}, eigenvectors {A.shape[0]}")
    Qa = _orthonormal_columns(A)
    Qb = _orthonormal_columns(P.T)
    if Qb.shape[1] == 0:
        raise DomainError("predicted vectors span the zero subspace")
    if Qa.shape[1] == 0:
        raise DomainError("eigenvector block spans the zero subspace")
    if Qa.shape[1] > Qb.shape[1]:
        Qa, Qb = Qb, Qa
    M = Qa.T @ Qb
    cos = np.clip(scipy.linalg.svdvals(M), 0.0, 1.0)  # descending
    sin = np.clip(scipy.linalg.svdvals(Qa - Qb @ M.T), 0.0, 1.0)[::-1]  # ascending
    small = cos**2 >= 0.5
    angles = np.where(small, np.arcsin(sin), np.arccos(cos))
    return np.sort(angles)


# -- reports -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    eigenvalues: np.ndarray
    d: int
    groups: GroupAnalysis
    principal_angles: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def group_partition(self) -> list[int]:
        return list(group_sizes(self.d))

    def reference_lines(self) -> dict:
        top, row, quad = predicted_levels(self.d)
        return {"v0": top, "rows": row, "quadratic": quad}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "eigenvalue", "group"])
        for r, (lam, g) in enumerate(zip(self.eigenvalues, self.groups.labels), start=1):
            w.writerow([r, repr(float(lam)), int(g)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "d": self.d,
            "count": int(self.eigenvalues.size),
            "group_sizes": self.group_partition,
            "group_stats": [s.__dict__ for s in self.groups.stats],
            "gap_ratios": self.groups.gap_ratios,
            "reference_lines": self.reference_lines(),
            "principal_angles": {k: [float(a) for a in v] for k, v in self.principal_angles.items()},
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def group_angles(eigenvectors: np.ndarray, basis) -> dict:
    """Principal angles between each eigenvector group and its predicted span."""
    sizes = group_sizes(basis.d)
    predicted = [basis.v0[None, :], basis.rows, np.vstack([basis.vab, basis.vgamma])]
    names = ["v0", "rows", "quadratic"]
    out, start = {}, 0
    for name, size, pred in zip(names, sizes, predicted):
        if size == 0 or start + size > eigenvectors.shape[1]:
            break
        out[name] = principal_angles(eigenvectors[:, start:start + size], pred)
        start += size
    return out


def analyze_spectrum(J, d: int, basis=None, method: str = "dense", k: int | None = None,
                     tol: float = 1e-10, seed: int = 0, metadata: dict | None = None) -> SpectrumReport:
    """Eigenvalues (dense or top-k Lanczos), grouping, and optional angles to ``basis``."""
    d = check_positive_int(d, "d")
    if method == "dense":
        spec = dense_spectrum(J)
        lam, vecs = spec.eigenvalues, spec.eigenvectors
    elif method == "lanczos":
        k = sum(group_sizes(d)) if k is None else k
        spec = topk_spectrum(J, k, tol=tol, seed=seed, return_vectors=basis is not None)
        lam, vecs = spec.eigenvalues, spec.eigenvectors
    else:
        raise DomainError(f"unknown method {method!r}")
    groups = group_analysis(lam, d)
    angles = group_angles(vecs, basis) if basis is not None and vecs is not None else {}
    meta = {"method": method, **(metadata or {})}
    return SpectrumReport(lam, d, groups, angles, meta)
