"""Numerical primitives: validated dense linear algebra and seeded randomness.

Everything is 64-bit float. Public operations validate their inputs and
refuse NaN/Inf rather than letting them propagate into training.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError

_MASK64 = (1 << 64) - 1


def as_matrix(values) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if a.size and not np.isfinite(a).all():
        raise ShapeError("matrix contains NaN or Inf")
    return a


def as_vector(values) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting non-finite entries."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got ndim={v.ndim}")
    if v.size and not np.isfinite(v).all():
        raise ShapeError("vector contains NaN or Inf")
    return v


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit conformance checking.

    Accepts anything array-like; both operands are validated as finite
    2-D float64 matrices. Summation order is whatever the installed BLAS
    uses, which is fixed for a given build, so repeated calls are
    bit-reproducible within one environment.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(logits) -> np.ndarray:
    """Stable softmax of a single logit vector.

    Uses max-subtraction so that extreme logits (which do occur late in
    training as margins grow) cannot overflow exp().
    """
    v = as_vector(logits)
    if v.size == 0:
        raise ShapeError("softmax of an empty vector")
    shifted = v - v.max()
    e = np.exp(shifted)
    # floor at the smallest subnormal: exp() underflows beyond a ~745 logit
    # gap, and downstream contracts want strictly positive probabilities
    return np.maximum(e / e.sum(), 5e-324)


def softmax_rows(logits) -> np.ndarray:
    """Row-wise stable softmax of an (N, K) logit matrix."""
    z = as_matrix(logits)
    if z.shape[1] == 0:
        raise ShapeError("softmax over zero classes")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return np.maximum(e / e.sum(axis=1, keepdims=True), 5e-324)


class SeededRng:
    """Deterministic random stream built on the counter-based Philox generator.

    The same (seed, stream) pair yields the same draw sequence on every
    platform, so an experiment config fully determines its results.
    Independent sub-streams for distinct purposes come from ``child``.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = (self.seed << 64) | self.stream
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "SeededRng":
        """A statistically independent stream tied to the same seed."""
        return SeededRng(self.seed, stream)

    def normal(self, n: int, mean: float = 0.0, stdev: float = 1.0) -> np.ndarray:
        if n < 0:
            raise ParameterError(f"cannot draw {n} samples")
        if not np.isfinite(mean) or not np.isfinite(stdev):
            raise ParameterError("mean and stdev must be finite")
        if stdev < 0:
            raise ParameterError(f"negative stdev {stdev}")
        if stdev == 0.0:
            return np.full(n, float(mean))
        return self._gen.normal(mean, stdev, size=n)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def uniform(self, size=None):
        return self._gen.uniform(size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def categorical(self, probs: np.ndarray, size: int) -> np.ndarray:
        """Draw ``size`` labels from a discrete distribution."""
        return self._gen.choice(len(probs), size=size, replace=True, p=probs)


def gaussian_draws(rng: SeededRng, n: int, mean: float, stdev: float) -> np.ndarray:
    """Draw ``n`` gaussian samples from a seeded stream. stdev=0 degenerates
    to a constant vector."""
    return rng.normal(n, mean, stdev)
