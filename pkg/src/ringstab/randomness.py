"""Counter-based uniform field shared by every simulator.

Each draw ``U_ij(t)`` is a pure function of ``(seed, i, j, t)``, obtained by
chaining four rounds of the SplitMix64 finalizer over the key components.
The 53 high bits of the final word are mapped to the open interval (0, 1)
as ``(k + 0.5) / 2**53``, so neither endpoint is ever produced.

The generator is pinned: changing the mixing constants or the key order
changes every simulated path in the package.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

MAX_SEED = 2**64 - 1


@njit(cache=True, inline="always")
def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def draw(seed, i, j, t):
    """Uniform on (0, 1) keyed by ``(seed, i, j, t)``; ``seed`` is a uint64."""
    h = _mix(seed)
    h = _mix(h ^ np.uint64(i))
    h = _mix(h ^ np.uint64(j))
    h = _mix(h ^ np.uint64(t))
    return (np.float64(h >> _S11) + 0.5) * _INV53


@njit(cache=True)
def _draw_many(seed, i, j, t, out):
    for n in range(out.shape[0]):
        out[n] = draw(seed, i[n], j[n], t[n])


class UniformField:
    """Deterministic family of i.i.d. uniforms ``U_ij(t)`` for a ring of size L.

    Indices follow the model: ``i`` in 1..L (cell/station), ``j`` in 0..L
    (0 for arrivals, j >= 1 for departures of type-j vehicles), ``t >= 0``.
    """

    def __init__(self, seed=0, L=1):
        seed = int(seed)
        if not 0 <= seed <= MAX_SEED:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if int(L) < 1:
            raise ValueError("L must be positive")
        self.seed = seed
        self.L = int(L)
        self.key = np.uint64(seed)

    def _check(self, i, j, t):
        if not 1 <= i <= self.L:
            raise IndexError(f"cell index i={i} outside 1..{self.L}")
        if not 0 <= j <= self.L:
            raise IndexError(f"type index j={j} outside 0..{self.L}")
        if t < 0:
            raise IndexError(f"time index t={t} is negative")

    def u(self, i, j, t):
        self._check(i, j, t)
        return float(draw(self.key, i, j, t))

    def many(self, i, j, t):
        """Vectorised lookup; arguments broadcast against each other."""
        i, j, t = np.broadcast_arrays(np.asarray(i, dtype=np.int64),
                                      np.asarray(j, dtype=np.int64),
                                      np.asarray(t, dtype=np.int64))
        if i.size and (i.min() < 1 or i.max() > self.L):
            raise IndexError("cell index outside 1..L")
        if j.size and (j.min() < 0 or j.max() > self.L):
            raise IndexError("type index outside 0..L")
        if t.size and t.min() < 0:
            raise IndexError("negative time index")
        out = np.empty(i.size, dtype=np.float64)
        _draw_many(self.key, i.ravel(), j.ravel(), t.ravel(), out)
        return out.reshape(i.shape)

    def __repr__(self):
        return f"UniformField(seed={self.seed}, L={self.L})"


def uniform(field, i, j, t):
    """``U_ij(t)`` from ``field``."""
    return field.u(i, j, t)
