"""Dense linear algebra and seeded randomness used by every other module.

Matrices are 2-D ``float64`` numpy arrays, vectors are 1-D. The validation
helpers (`as_matrix`, `as_vector`) are the single entry point for turning
caller input into checked arrays, in the spirit of sklearn's ``check_array``:
everything downstream may assume finite float64 data of the right rank.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, RangeError, ShapeError

__all__ = [
    "RngStream",
    "as_matrix",
    "as_vector",
    "check_finite",
    "matmul",
    "column_l2_norms",
    "uniform_matrix",
    "finite_difference_gradient",
]

# Central-difference sweet spot for float64: truncation ~eps^2, roundoff ~ulp/eps.
DEFAULT_FD_EPS = 1e-5

_UINT64_MASK = (1 << 64) - 1


class RngStream:
    """Deterministic random stream backed by the counter-based Philox generator.

    The same seed yields the same sample sequence on every run and platform
    (numpy guarantees Philox stream stability). A stream is single-consumer;
    use :meth:`derive` to split off independent child streams for parallel or
    logically separate uses.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _UINT64_MASK
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def derive(self, label: str | int) -> "RngStream":
        """Child stream with a seed hashed from (seed, label); order-independent."""
        digest = hashlib.sha256(f"{self.seed}/{label}".encode("utf-8")).digest()
        return RngStream(int.from_bytes(digest[:8], "big"))

    def uniform(self, lo: float, hi: float, size=None) -> np.ndarray:
        return self._gen.uniform(lo, hi, size=size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high), matching numpy's half-open convention."""
        return self._gen.integers(low, high, size=size)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed})"


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite float64 matrix (2-D array)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {arr.shape}")
    check_finite(arr, name)
    return arr


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Validate and return a finite float64 vector (1-D array)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ShapeError(f"{name} must be non-empty")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit conformance check naming both shapes."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def column_l2_norms(m) -> np.ndarray:
    """Per-column Euclidean norms: entry j is sqrt(sum_i m[i, j]^2)."""
    m = as_matrix(m, "m")
    return np.sqrt((m * m).sum(axis=0))


def uniform_matrix(rows: int, cols: int, lo: float, hi: float, rng: RngStream) -> np.ndarray:
    """Matrix of uniform samples in [lo, hi), deterministic per stream state."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"matrix dimensions must be positive, got ({rows}, {cols})")
    if not lo < hi:
        raise RangeError(f"uniform range requires lo < hi, got lo={lo}, hi={hi}")
    return rng.uniform(lo, hi, size=(rows, cols))


def finite_difference_gradient(
    f: Callable[[np.ndarray], float],
    x: Sequence[float] | np.ndarray,
    eps: float = DEFAULT_FD_EPS,
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Used as the independent oracle for analytic gradients; it only ever calls
    ``f`` and therefore shares no code with any backward pass it checks.
    """
    if eps <= 0:
        raise RangeError(f"eps must be positive, got {eps}")
    x = as_vector(x, "x")
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        step = np.zeros_like(x)
        step[i] = eps
        f_plus = float(f(x + step))
        f_minus = float(f(x - step))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"function evaluated to a non-finite value near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad
