"""Shared numeric kernel.

Matrices are plain 2-D ``float64`` numpy arrays. Variances are population
variances (divide by ``n``) throughout the package.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

PIVOT_TOL = 1e-12


class NumericError(ArithmeticError):
    """Base class for numerical failures (singularity, zero variance, ...)."""


class SingularMatrixError(NumericError):
    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


class ZeroVarianceError(NumericError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"zero-variance column(s) at index {self.columns}")


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def column_mean_variance(m) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population variance (two-pass)."""
    a = as_matrix(m)
    if a.shape[0] == 0:
        raise ValueError("column statistics of an empty matrix")
    means = a.mean(axis=0)
    variances = ((a - means) ** 2).mean(axis=0)
    return means, variances


def correlation_matrix(m) -> np.ndarray:
    """Pearson correlation of the columns of ``m``.

    The result is exactly symmetric with an exact unit diagonal; off-diagonal
    entries are clipped into [-1, 1].
    """
    a = as_matrix(m)
    means, variances = column_mean_variance(a)
    zero = np.flatnonzero(variances == 0)
    if zero.size:
        raise ZeroVarianceError(zero.tolist())
    z = (a - means) / np.sqrt(variances)
    c = (z.T @ z) / a.shape[0]
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return c


def solve_linear(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by Gaussian elimination with partial pivoting.

    ``b`` may be a vector or a matrix of right-hand sides. A pivot whose
    magnitude falls below ``1e-12`` times the largest entry of ``a`` raises
    :class:`SingularMatrixError` carrying the offending column.
    """
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"coefficient matrix must be square, got {a.shape}")
    n = a.shape[0]
    vector = b.ndim == 1
    if vector:
        b = b.reshape(-1, 1)
    if b.shape[0] != n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {n}")

    scale = np.abs(a).max() if a.size else 0.0
    tol = PIVOT_TOL * max(scale, 1.0)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) < tol:
            raise SingularMatrixError(f"matrix is rank-deficient at column {k}", column=k)
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        factors = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= np.outer(factors, a[k, k:])
        b[k + 1:] -= np.outer(factors, b[k])

    x = np.empty_like(b)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x[:, 0] if vector else x


def invert(a) -> np.ndarray:
    a = as_matrix(a)
    return solve_linear(a, np.eye(a.shape[0]))


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer (Steele, Lea & Flood 2014)."""
    x = (x + GOLDEN_GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for sub-stream ``path`` of ``seed``."""
    s = splitmix64(seed & MASK64)
    for index in path:
        s = splitmix64(s ^ splitmix64((index * GOLDEN_GAMMA) & MASK64))
    return s


class RandomSource:
    """Seeded random stream with deterministic, independent sub-streams.

    Wraps a PCG64 ``numpy.random.Generator``. A single instance is meant for a
    single consumer; concurrent consumers take ``derive(i)`` children.
    """

    def __init__(self, seed: int = 42):
        self.seed = int(seed) & MASK64
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, *path: int) -> "RandomSource":
        return RandomSource(derive_seed(self.seed, *path))

    def child_seed(self, *path: int) -> int:
        return derive_seed(self.seed, *path)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def __repr__(self):
        return f"RandomSource(seed={self.seed})"
