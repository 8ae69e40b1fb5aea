"""Random first-layer weights and their column geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import WEIGHTS, GaussianStream
from .exceptions import DimensionError, DomainError
from .validation import check_dense_cap, check_positive_int, check_positive_real, check_seed


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """The d x p weight matrix.

    ``entries[l, i]`` is the weight from input coordinate ``l`` to hidden unit
    ``i``; rows are the ``W_l`` and columns the ``W^(i)``.
    """

    entries: np.ndarray
    seed: int | None = None
    scale: float | None = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64, order="C")
        if entries.ndim != 2 or entries.size == 0:
            raise DimensionError(f"weights must be a non-empty 2-D array, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise DomainError("weights contain non-finite entries")
        zero = zero_columns(entries)
        if zero.size:
            raise DomainError(f"column {int(zero[0])} of W has zero norm")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def p(self) -> int:
        return self.entries.shape[1]

    @property
    def rows(self) -> np.ndarray:
        return self.entries

    def column(self, i: int) -> np.ndarray:
        return self.entries[:, i]

    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.einsum("li,li->i", self.entries, self.entries))

    def row_norms_sq(self) -> np.ndarray:
        return np.einsum("li,li->l", self.entries, self.entries)

    def run_id(self) -> tuple:
        return (self.d, self.p, self.seed)

    def __eq__(self, other):
        if not isinstance(other, WeightMatrix):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.scale == other.scale
            and np.array_equal(self.entries, other.entries)
        )

    __hash__ = None


def zero_columns(entries: np.ndarray) -> np.ndarray:
    return np.flatnonzero(~np.any(entries != 0.0, axis=0))


def generate_weights(d, p, seed=0, scale=None, zero_columns_policy="reject") -> WeightMatrix:
    """Draw W with i.i.d. N(0, scale) entries, ``scale`` defaulting to 1/p.

    Values are consumed from the seed's weight stream in row-major order
    (l = 1..d outer, i = 1..p inner). Under the ``"resample"`` policy an
    all-zero column is redrawn from the continuation of the same stream.
    """
    d = check_positive_int(d, "d")
    p = check_positive_int(p, "p")
    seed = check_seed(seed)
    scale = 1.0 / p if scale is None else check_positive_real(scale, "scale")
    if zero_columns_policy not in ("reject", "resample"):
        raise DomainError(f"unknown zero-column policy {zero_columns_policy!r}")

    stream = GaussianStream(seed, WEIGHTS)
    entries = stream.normal((d, p)) * np.sqrt(scale)
    bad = zero_columns(entries)
    while bad.size:
        if zero_columns_policy == "reject":
            raise DomainError(f"generated column {int(bad[0])} of W is exactly zero")
        entries[:, bad] = stream.normal((d, bad.size)) * np.sqrt(scale)
        bad = zero_columns(entries)
    return WeightMatrix(entries, seed=seed, scale=scale)


@dataclass(frozen=True, eq=False)
class ColumnGeometry:
    """Column norms and cosines between the columns of W."""

    norms: np.ndarray
    unit_gram: np.ndarray
    d: int | None = None
    seed: int | None = None

    @property
    def p(self) -> int:
        return self.norms.shape[0]

    def angles(self) -> np.ndarray:
        return np.arccos(self.unit_gram)

    def norm_products(self) -> np.ndarray:
        """A_ij = ||W^(i)|| ||W^(j)||."""
        return np.outer(self.norms, self.norms)

    def dots(self) -> np.ndarray:
        return self.unit_gram * self.norm_products()


def unit_cosines(cols_a: np.ndarray, norms_a: np.ndarray, cols_b: np.ndarray, norms_b: np.ndarray) -> np.ndarray:
    cos = (cols_a.T @ cols_b) / np.outer(norms_a, norms_b)
    return np.clip(cos, -1.0, 1.0, out=cos)


def column_geometry(W: WeightMatrix, dense_cap: int | None = None) -> ColumnGeometry:
    check_dense_cap(W.p, dense_cap)
    norms = W.column_norms()
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DomainError(f"column {int(zero[0])} of W has zero norm")
    gram = unit_cosines(W.entries, norms, W.entries, norms)
    gram = np.triu(gram, 1)
    gram = gram + gram.T
    np.fill_diagonal(gram, 1.0)
    norms.setflags(write=False)
    gram.setflags(write=False)
    return ColumnGeometry(norms=norms, unit_gram=gram, d=W.d, seed=W.seed)
