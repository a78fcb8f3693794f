"""Dense vector primitives: clipping, top-k extraction, and count sketches.

Parameter vectors are plain 1-D float64 numpy arrays. All operations are pure
functions of their inputs and reject non-finite values, so repeated calls with
the same arguments agree bitwise.

Count-sketch hashing (fixed so collision oracles are reproducible): each row j
draws (a, b) pairs from ``numpy.random.Generator(PCG64(seed))``; coordinate i
lands in bucket ``((a_j * i + b_j) mod p) mod cols`` with sign
``1 - 2 * (((a'_j * i + b'_j) mod p) mod 2)`` where p = 2**31 - 1. All
arithmetic fits in int64 for dimensions below p. Sketching is linear by
construction; because float addition is not associative, S(x)+S(y) == S(x+y)
is bitwise only when every partial sum is exactly representable (e.g. integer
valued inputs) and agrees to ~1e-15 relative otherwise.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericInputError, ParameterError

_HASH_PRIME = np.int64(2**31 - 1)


def as_vector(values, d: int | None = None) -> np.ndarray:
    """Validate `values` as a finite 1-D float64 vector, optionally of length d."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ParameterError(f"expected a 1-D vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise ParameterError(f"expected dimension {d}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NumericInputError("vector contains NaN or Inf")
    return v


def l2_clip(u, L: float) -> np.ndarray:
    """Scale u by min(1, L/||u||_2). The zero vector passes through unchanged."""
    u = as_vector(u)
    if not L >= 0:
        raise ParameterError(f"clip bound must be >= 0, got {L}")
    norm = float(np.linalg.norm(u))
    if norm == 0.0 or norm <= L:
        return u.copy()
    return u * (L / norm)


def l1_distance(a, b) -> float:
    """Sum of absolute coordinate differences."""
    a = as_vector(a)
    b = as_vector(b, d=a.shape[0])
    return float(np.sum(np.abs(a - b)))


@dataclass(frozen=True)
class SparseUpdate:
    """A sparse vector: strictly increasing indices into a dim-length vector."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or val.ndim != 1 or idx.shape != val.shape:
            raise ParameterError("indices and values must be 1-D and equal length")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.dim):
            raise ParameterError("indices out of range")
        if idx.size > 1 and not np.all(np.diff(idx) > 0):
            raise ParameterError("indices must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise NumericInputError("sparse values contain NaN or Inf")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def densify(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        out[self.indices] = self.values
        return out

    def l1(self) -> float:
        return float(np.sum(np.abs(self.values)))


def top_k(v, k: int) -> SparseUpdate:
    """The k largest-magnitude coordinates of v; ties go to the lowest index.

    Always returns exactly k entries: when v has fewer than k nonzeros, zero
    coordinates pad the result in index order (|0| ties break by index too).
    """
    v = as_vector(v)
    d = v.shape[0]
    if not 1 <= k <= d:
        raise ParameterError(f"k must be in [1, {d}], got {k}")
    # lexsort uses the last key as primary: magnitude desc, then index asc.
    order = np.lexsort((np.arange(d), -np.abs(v)))
    idx = np.sort(order[:k])
    return SparseUpdate(indices=idx, values=v[idx], dim=d)


@functools.lru_cache(maxsize=64)
def hash_arrays(rows: int, cols: int, seed: int, d: int):
    """Bucket and sign assignments for every coordinate, shape (rows, d) each.

    Exposed so collision oracles can enumerate the exact table layout for a
    given (rows, cols, seed, d).
    """
    if d >= int(_HASH_PRIME):
        raise ParameterError("dimension too large for the 31-bit hash family")
    rng = np.random.Generator(np.random.PCG64(seed))
    coeffs = rng.integers(0, int(_HASH_PRIME), size=(rows, 4), dtype=np.int64)
    coeffs[:, 0] = np.maximum(coeffs[:, 0], 1)  # bucket multiplier nonzero
    coeffs[:, 2] = np.maximum(coeffs[:, 2], 1)  # sign multiplier nonzero
    i = np.arange(d, dtype=np.int64)
    buckets = np.empty((rows, d), dtype=np.int64)
    signs = np.empty((rows, d), dtype=np.float64)
    for j in range(rows):
        a, b, a2, b2 = coeffs[j]
        buckets[j] = ((a * i + b) % _HASH_PRIME) % cols
        signs[j] = 1.0 - 2.0 * (((a2 * i + b2) % _HASH_PRIME) % 2)
    buckets.setflags(write=False)
    signs.setflags(write=False)
    return buckets, signs


@dataclass(frozen=True)
class CountSketch:
    """A rows x cols signed-hash table. Arithmetic requires matching shape+seed."""

    rows: int
    cols: int
    seed: int
    table: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("sketch must have at least one row and column")
        table = self.table
        if table is None:
            table = np.zeros((self.rows, self.cols), dtype=np.float64)
        else:
            table = np.asarray(table, dtype=np.float64)
            if table.shape != (self.rows, self.cols):
                raise ParameterError("table shape does not match rows x cols")
        object.__setattr__(self, "table", table)

    def _check_compat(self, other: "CountSketch"):
        if (self.rows, self.cols, self.seed) != (other.rows, other.cols, other.seed):
            raise ParameterError("sketches differ in shape or seed")

    def __add__(self, other: "CountSketch") -> "CountSketch":
        self._check_compat(other)
        return CountSketch(self.rows, self.cols, self.seed, self.table + other.table)

    def __sub__(self, other: "CountSketch") -> "CountSketch":
        self._check_compat(other)
        return CountSketch(self.rows, self.cols, self.seed, self.table - other.table)

    def __mul__(self, scalar: float) -> "CountSketch":
        return CountSketch(self.rows, self.cols, self.seed, self.table * float(scalar))

    __rmul__ = __mul__


def sketch(v, rows: int, cols: int, seed: int) -> CountSketch:
    """Sketch a dense vector: coordinate i adds sign(i,j)*v[i] to its bucket in row j."""
    v = as_vector(v)
    buckets, signs = hash_arrays(rows, cols, seed, v.shape[0])
    table = np.zeros((rows, cols), dtype=np.float64)
    for j in range(rows):
        np.add.at(table[j], buckets[j], signs[j] * v)
    return CountSketch(rows, cols, seed, table)


def unsketch(s: CountSketch, d: int) -> np.ndarray:
    """Median-of-rows estimate of every coordinate of the sketched vector."""
    buckets, signs = hash_arrays(s.rows, s.cols, s.seed, d)
    per_row = signs * s.table[np.arange(s.rows)[:, None], buckets]
    return np.median(per_row, axis=0)


def unsketch_topk(s: CountSketch, k: int, d: int) -> SparseUpdate:
    """The k largest-magnitude coordinate estimates recovered from the sketch."""
    if k > d:
        raise ParameterError(f"k={k} exceeds dimension {d}")
    return top_k(unsketch(s, d), k)
