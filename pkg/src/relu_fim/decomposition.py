"""Candidate eigenvectors of J and the structured low-rank approximation.

The family V, in canonical order, is::

    v0                                    ||W^(i)|| / sqrt(d)
    W_1 .. W_d                            rows of W
    v(a,b), a < b, lexicographic          sqrt(d) W_ai W_bi / ||W^(i)||
    vg_1 .. vg_d                          (v(g,g) - v0) / sqrt(2)

and J = l0 v0^T v0 + lW sum_k W_k^T W_k + lq (sum_g vg^T vg + sum_{a<b} v(a,b)^T v(a,b)) + R
with l0 = (2d+1)/(4 pi), lW = 1/4, lq = 1/(2 pi d).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, DomainError
from .kernel import APPROX, KernelMatrix
from .validation import check_dense_cap, symmetrize_upper
from .weights import WeightMatrix

V0, ROW, PAIR, GAMMA = "v0", "row", "pair", "gamma"


def coefficients(d: int) -> dict[str, float]:
    return {
        "v0": (2 * d + 1) / (4 * np.pi),
        "row": 0.25,
        "quadratic": 1.0 / (2 * np.pi * d),
    }


@dataclass(frozen=True, eq=False)
class FeatureBasis:
    v0: np.ndarray
    rows: np.ndarray
    vab: np.ndarray
    vgamma: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    d: int
    seed: int | None = None
    diag: np.ndarray | None = None  # the v(g,g), kept for diagnostics

    @property
    def p(self) -> int:
        return self.v0.shape[0]

    @property
    def size(self) -> int:
        return 1 + 2 * self.d + len(self.pairs)

    def run_id(self) -> tuple:
        return (self.d, self.p, self.seed)

    def stacked(self) -> np.ndarray:
        """All vectors of V as rows, in canonical order."""
        return np.vstack([self.v0[None, :], self.rows, self.vab, self.vgamma])

    def labels(self) -> list[str]:
        return (
            ["v0"]
            + [f"W_{l + 1}" for l in range(self.d)]
            + [f"v({a + 1},{b + 1})" for a, b in self.pairs]
            + [f"vg_{g + 1}" for g in range(self.d)]
        )

    def families(self) -> list[str]:
        return [V0] + [ROW] * self.d + [PAIR] * len(self.pairs) + [GAMMA] * self.d

    def gamma_sum_residual(self) -> float:
        return float(np.linalg.norm(self.vgamma.sum(axis=0)))


def build_basis(W: WeightMatrix) -> FeatureBasis:
    E = W.entries
    d = W.d
    norms = W.column_norms()
    if np.any(norms == 0):
        raise DomainError(f"column {int(np.flatnonzero(norms == 0)[0])} of W has zero norm")
    sqrt_d = np.sqrt(d)
    v0 = norms / sqrt_d
    scaled = E / norms  # unit columns
    pairs = tuple(combinations(range(d), 2))
    if pairs:
        a = np.array([ab[0] for ab in pairs])
        b = np.array([ab[1] for ab in pairs])
        vab = sqrt_d * E[a] * scaled[b]
    else:
        vab = np.empty((0, W.p))
    vgg = sqrt_d * E * scaled
    vgamma = (vgg - v0) / np.sqrt(2.0)
    return FeatureBasis(v0=v0, rows=E, vab=vab, vgamma=vgamma, pairs=pairs, d=d, seed=W.seed, diag=vgg)


def _weights(basis: FeatureBasis) -> np.ndarray:
    c = coefficients(basis.d)
    return np.concatenate([
        [c["v0"]],
        np.full(basis.d, c["row"]),
        np.full(len(basis.pairs) + basis.d, c["quadratic"]),
    ])


class ApproxOperator:
    """Matrix-free J_approx = B^T diag(w) B, each product costing O(p |V|)."""

    def __init__(self, basis: FeatureBasis):
        self.basis = basis
        self.B = basis.stacked()
        self.w = _weights(basis)
        self.d = basis.d
        self.seed = basis.seed

    @property
    def p(self) -> int:
        return self.basis.p

    @property
    def shape(self) -> tuple[int, int]:
        return (self.p, self.p)

    def run_id(self) -> tuple:
        return self.basis.run_id()

    def matmat(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=np.float64)
        if V.shape[0] != self.p:
            raise DimensionError(f"operand has {V.shape[0]} rows, operator is {self.p}x{self.p}")
        coef = self.B @ V
        coef *= self.w[:, None] if coef.ndim == 2 else self.w
        return self.B.T @ coef

    def trace(self) -> float:
        return float(np.sum(self.w * np.einsum("ki,ki->k", self.B, self.B)))


@dataclass(frozen=True, eq=False)
class ApproxDecomposition:
    coefficients: dict
    basis: FeatureBasis
    residual_bound: float | None = None

    def operator(self) -> ApproxOperator:
        return ApproxOperator(self.basis)

    def dense(self, dense_cap: int | None = None) -> KernelMatrix:
        return assemble_approx(self.basis, dense_cap=dense_cap)


def assemble_approx(basis: FeatureBasis, dense_cap: int | None = None) -> KernelMatrix:
    check_dense_cap(basis.p, dense_cap)
    B = basis.stacked()
    values = symmetrize_upper((B.T * _weights(basis)) @ B)
    return KernelMatrix(values, APPROX, {}, d=basis.d, seed=basis.seed)


def approx_decomposition(basis: FeatureBasis, residual_bound: float | None = None) -> ApproxDecomposition:
    return ApproxDecomposition(coefficients(basis.d), basis, residual_bound)


def gamma_orthonormal_basis(basis: FeatureBasis) -> np.ndarray:
    """Orthonormal basis (d-1 rows) of span{vg}: pivoted QR, last pivot dropped."""
    if basis.d < 2:
        return np.empty((0, basis.p))
    Q, R, piv = scipy.linalg.qr(basis.vgamma.T, mode="economic", pivoting=True)
    return Q[:, : basis.d - 1].T


def _apply(J, V: np.ndarray) -> np.ndarray:
    if hasattr(J, "matmat"):
        return J.matmat(V)
    return np.asarray(J) @ V


def rayleigh_quotients(J, basis: FeatureBasis) -> list[tuple[str, float]]:
    """v J v^T / ||v||^2 for every v in V, against any J (dense or operator)."""
    p = J.shape[0]
    if p != basis.p:
        raise DimensionError(f"J is {p}x{p} but the basis vectors have length {basis.p}")
    B = basis.stacked()
    JB = _apply(J, B.T)
    num = np.einsum("ki,ik->k", B, JB)
    den = np.einsum("ki,ki->k", B, B)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = num / den
    return list(zip(basis.labels(), q.tolist()))


@dataclass(frozen=True, eq=False)
class GramReport:
    """Norms and pairwise inner products of V, with deviations from the ideal.

    ``norm_dev[k] = | ||v_k||^2 - 1 |``. ``cross_dev`` covers the pairs with at
    least one vector outside V2 (target 0); ``gamma_dev`` the distinct pairs
    inside V2 (target -1/(d-1)).
    """

    labels: list[str]
    families: list[str]
    gram: np.ndarray
    d: int
    p: int
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def run_id(self) -> tuple:
        return (self.d, self.p, self.seed)

    @property
    def norm_sq(self) -> np.ndarray:
        return np.diag(self.gram).copy()

    @property
    def norm_dev(self) -> np.ndarray:
        return np.abs(self.norm_sq - 1.0)

    def _masks(self):
        fam = np.array(self.families)
        in_v2 = fam == GAMMA
        upper = np.triu(np.ones_like(self.gram, dtype=bool), 1)
        both = np.outer(in_v2, in_v2)
        return upper & ~both, upper & both

    @property
    def cross_dev(self) -> np.ndarray:
        mask, _ = self._masks()
        return np.abs(self.gram[mask])

    @property
    def gamma_dev(self) -> np.ndarray:
        _, mask = self._masks()
        if self.d < 2:
            return np.empty(0)
        return np.abs(self.gram[mask] + 1.0 / (self.d - 1))

    def gamma_gram(self) -> np.ndarray:
        fam = np.array(self.families)
        idx = np.flatnonzero(fam == GAMMA)
        return self.gram[np.ix_(idx, idx)]

    def family_norm_dev(self, family: str) -> np.ndarray:
        fam = np.array(self.families)
        return self.norm_dev[fam == family]

    def summary(self) -> dict:
        out = {
            "max_norm_dev": {f: float(np.max(self.family_norm_dev(f), initial=0.0)) for f in (V0, ROW, PAIR, GAMMA)},
            "max_cross_dev": float(np.max(self.cross_dev, initial=0.0)),
            "max_gamma_dev": float(np.max(self.gamma_dev, initial=0.0)),
        }
        return out

    def rows(self):
        """(vector-id, kind, value) rows for every norm and pair."""
        for k, lab in enumerate(self.labels):
            yield (lab, "norm_sq", float(self.gram[k, k]))
        for i, j in zip(*np.triu_indices(len(self.labels), 1)):
            yield (f"{self.labels[i]}|{self.labels[j]}", "inner", float(self.gram[i, j]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["vector_id", "kind", "value"])
        for row in self.rows():
            w.writerow([row[0], row[1], repr(row[2])])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "p": self.p, "seed": self.seed, **self.summary()}, sort_keys=True, indent=2)


def basis_geometry(basis: FeatureBasis) -> GramReport:
    B = basis.stacked()
    gram = B @ B.T
    gram = symmetrize_upper(gram)
    return GramReport(basis.labels(), basis.families(), gram, basis.d, basis.p, basis.seed)


def quotients_csv(quotients, bounds=None) -> str:
    """CSV with columns vector_id,value,bound,pass."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vector_id", "value", "bound", "pass"])
    bounds = bounds or {}
    for label, value in quotients:
        b = bounds.get(label)
        w.writerow([label, repr(value), "" if b is None else repr(b), "" if b is None else str(value >= b).lower()])
    return buf.getvalue()
