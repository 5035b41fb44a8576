"""Counter-based random numbers.

Every draw is a pure function of ``(seed, walker, counter, stream)`` built from
the SplitMix64 finalizer. No generator state is carried between draws, so any
partition of walkers across threads or resumed runs reproduces the same
numbers bit for bit.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM = np.uint64(0xD1B54A32D192ED03)
_2POW53 = 2.0 ** -53

STREAM_WAIT = 0
STREAM_JUMP = 1
STREAM_INIT = 2


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash64(seed, walker, counter, stream=0):
    """64-bit hash of the draw coordinates; arguments broadcast."""
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        w = np.atleast_1d(np.asarray(walker, dtype=np.uint64))
        c = np.atleast_1d(np.asarray(counter, dtype=np.uint64))
        s = np.uint64(stream)
        z = _mix(key ^ _mix(w * _GOLDEN + s * _STREAM))
        return _mix(z + c * _GOLDEN + _GOLDEN)


def uniform(seed, walker, counter, stream=0):
    """Uniform doubles strictly inside (0, 1)."""
    bits = hash64(seed, walker, counter, stream) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * _2POW53
