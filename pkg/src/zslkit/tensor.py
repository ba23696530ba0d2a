"""Dense/sparse linear-algebra kernels and the seeded RNG.

Everything works on plain 2-D float64 numpy arrays. Sparse adjacencies are
kept in canonical CSR form (strictly increasing column indices within each
row) so that equality checks and summation order are well defined.

Determinism contract:
  * matmul delegates to BLAS dgemm; the accumulation order is the kernel's
    fixed order for a given shape, bit-reproducible run to run on a platform.
  * spmm accumulates stored entries strictly in increasing-column order with
    separate multiply and add roundings, so it agrees bit-for-bit with any
    reference that sums the same nonzeros in the same order.
  * Rng is numpy's Philox counter-based generator (Philox4x32-10), seeded via
    SeedSequence; equal seeds give equal streams across platforms. This
    choice is frozen: changing it would invalidate recorded fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else.

    Strided views (e.g. transposes) pass through uncopied; BLAS handles them.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    return arr


class Rng:
    """Seeded counter-based random stream (numpy Philox4x32-10).

    Identical seeds produce identical draw sequences; all stochastic code in
    the package threads one of these explicitly instead of touching global
    numpy state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def random(self, shape) -> np.ndarray:
        """Uniform doubles in [0, 1)."""
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


@dataclass(frozen=True)
class SparseAdjacency:
    """n x n sparse matrix in canonical CSR form.

    row_ptr has length n+1 and is nondecreasing; col_idx is strictly
    increasing within each row; values are finite. Raw graphs hold 1.0
    entries, normalized graphs nonnegative entries.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.asarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.asarray(self.col_idx, dtype=np.int64))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        rp, ci, v = self.row_ptr, self.col_idx, self.values
        if rp.shape != (self.n + 1,):
            raise ShapeError(f"row_ptr must have length n+1={self.n + 1}, got {rp.shape}")
        if rp[0] != 0 or rp[-1] != ci.size or np.any(np.diff(rp) < 0):
            raise ShapeError("row_ptr must start at 0, end at nnz and be nondecreasing")
        if ci.size != v.size:
            raise ShapeError("col_idx and values must have equal length")
        if ci.size and (ci.min() < 0 or ci.max() >= self.n):
            raise ShapeError(f"col_idx entries must lie in [0, {self.n})")
        if ci.size > 1:
            row_of = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(rp))
            within_row = row_of[1:] == row_of[:-1]
            if np.any(within_row & (np.diff(ci) <= 0)):
                bad = int(row_of[1:][within_row & (np.diff(ci) <= 0)][0])
                raise ShapeError(f"col_idx not strictly increasing in row {bad}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("sparse values must be finite")

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @classmethod
    def from_coo(cls, n: int, rows, cols, values) -> "SparseAdjacency":
        """Build canonical CSR from COO triplets; duplicate entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (rows.shape == cols.shape == values.shape):
            raise ShapeError("rows, cols, values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n:
                raise ShapeError(f"COO indices out of range for n={n}")
            order = np.lexsort((cols, rows))
            rows, cols, values = rows[order], cols[order], values[order]
            keep = np.ones(rows.size, dtype=bool)
            keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            group = np.cumsum(keep) - 1
            summed = np.zeros(int(group[-1]) + 1, dtype=np.float64)
            np.add.at(summed, group, values)
            rows, cols, values = rows[keep], cols[keep], summed
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        row_ptr = np.cumsum(row_ptr)
        return cls(n=n, row_ptr=row_ptr, col_idx=cols, values=values)

    @classmethod
    def identity(cls, n: int) -> "SparseAdjacency":
        idx = np.arange(n, dtype=np.int64)
        return cls(n=n, row_ptr=np.arange(n + 1, dtype=np.int64),
                   col_idx=idx, values=np.ones(n))

    @classmethod
    def empty(cls, n: int) -> "SparseAdjacency":
        return cls(n=n, row_ptr=np.zeros(n + 1, dtype=np.int64),
                   col_idx=np.zeros(0, dtype=np.int64), values=np.zeros(0))

    def coo(self):
        """Return (rows, cols, values) arrays in CSR storage order."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.row_ptr))
        return rows, self.col_idx.copy(), self.values.copy()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        rows, cols, vals = self.coo()
        out[rows, cols] = vals
        return out

    def transpose(self) -> "SparseAdjacency":
        # cached: the backward pass asks for it once per layer per step
        cached = getattr(self, "_transpose_cache", None)
        if cached is None:
            rows, cols, vals = self.coo()
            cached = SparseAdjacency.from_coo(self.n, cols, rows, vals)
            object.__setattr__(self, "_transpose_cache", cached)
        return cached

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.n)
        rows, _, vals = self.coo()
        np.add.at(out, rows, vals)
        return out

    def pattern(self) -> set:
        rows, cols, _ = self.coo()
        return set(zip(rows.tolist(), cols.tolist()))

    def with_values(self, values: np.ndarray) -> "SparseAdjacency":
        return SparseAdjacency(self.n, self.row_ptr.copy(), self.col_idx.copy(), values)

    def same_pattern(self, other: "SparseAdjacency") -> bool:
        return (self.n == other.n
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense product a @ b with explicit shape diagnostics."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, left is {a.shape[0]}x{a.shape[1]}, "
            f"right is {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def spmm(s: SparseAdjacency, x: np.ndarray) -> np.ndarray:
    """Sparse-dense product s @ x.

    Each output row accumulates its stored neighbors in increasing-column
    order with separate multiply/add roundings, so the result is bit-equal to
    a dense reference that sums the same nonzeros in the same order (zeros
    interleaved by a dense reference add exactly nothing in IEEE arithmetic).
    """
    x = as_matrix(x, "dense factor")
    if s.n != x.shape[0]:
        raise ShapeError(f"spmm: adjacency is {s.n}x{s.n} but dense factor has {x.shape[0]} rows")
    out = np.zeros((s.n, x.shape[1]))
    rp, ci, v = s.row_ptr, s.col_idx, s.values
    for i in range(s.n):
        row = out[i]
        for t in range(rp[i], rp[i + 1]):
            row += v[t] * x[ci[t]]
    return out


def row_l2_normalize(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Scale each row to unit L2 norm; rows with norm < eps divide by eps."""
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    x = as_matrix(x)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    return x / np.maximum(norms, eps)[:, None]


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must be in (0, 1), got {slope}")
    x = as_matrix(x)
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    """Elementwise derivative; the subgradient at exactly 0 is `slope`."""
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must be in (0, 1), got {slope}")
    x = as_matrix(x)
    return np.where(x > 0, 1.0, slope)


def dropout(x: np.ndarray, rate: float, rng: Rng | None, training: bool):
    """Inverted dropout.

    Training: kept entries are scaled by 1/(1-rate) and the scaled keep-mask
    is returned for the backward pass. Eval (or rate 0): x is passed through
    untouched and no random numbers are consumed.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_matrix(x)
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ConfigError("dropout in training mode needs an Rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask
