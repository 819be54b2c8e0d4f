"""Minimal dense math on float64 numpy arrays.

Vectors are 1-D float64 arrays, matrices 2-D float64 row-major arrays.
Everything here is a pure function; nothing mutates its inputs. Gradient
checking needs double precision throughout, so float32 never appears.
"""

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class Rng:
    """Deterministic random source (PCG64 behind numpy's Generator).

    Identical seeds produce identical draw sequences on every platform.
    ``child(*key)`` derives an independent stream from the same seed, so a
    single user-facing seed can feed many components reproducibly.
    """

    def __init__(self, seed, _seq=None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, *key):
        return Rng(self.seed, _seq=np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key)))

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, seq):
        return seq[int(self._gen.integers(len(seq)))]

    def permutation(self, n):
        return self._gen.permutation(n)


def vector(values):
    """Copy ``values`` into a 1-D float64 array."""
    out = np.array(values, dtype=DTYPE)
    if out.ndim != 1:
        raise ShapeError(f"expected 1-D data, got shape {out.shape}")
    return out


def matrix(values):
    """Copy ``values`` into a 2-D float64 array."""
    out = np.array(values, dtype=DTYPE)
    if out.ndim != 2:
        raise ShapeError(f"expected 2-D data, got shape {out.shape}")
    return out


def matvec(m, x):
    """Matrix-vector product m @ x with an explicit shape check."""
    if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: {m.shape} @ {x.shape}")
    return m @ x


_EWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "max": np.maximum,
    "avg": lambda a, b: (a + b) / 2.0,
}


def ewise(op, a, b):
    """Element-wise combine of two equal-length vectors.

    ``op`` is one of add, sub, mul, max, avg.
    """
    if op not in _EWISE:
        raise ValueError(f"unknown element-wise op {op!r}")
    if a.shape != b.shape:
        raise ShapeError(f"ewise {op}: {a.shape} vs {b.shape}")
    return _EWISE[op](a, b)


def outer(a, b):
    """Outer product a b^T flattened row-major: result[i*len(b)+j] = a[i]*b[j]."""
    return np.outer(a, b).reshape(-1)


def relu(x):
    return np.maximum(0.0, x)


def sigmoid(x):
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(x)


def init_uniform(rng, rows, cols, scale=0.05):
    """Matrix with i.i.d. entries uniform in [-scale, scale]."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, (rows, cols)).astype(DTYPE)


def init_uniform_vector(rng, n, scale=0.05):
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, n).astype(DTYPE)
