"""Counter-based random numbers.

Each draw is a pure hash of (seed, stream tag, droplet uid, step index,
component), so results do not depend on the order in which droplets are
processed and there is no generator state to checkpoint.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream tags
TAG_DIAMETER = 1
TAG_DISPERSION = 2


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser applied elementwise to uint64 data."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_keys(*keys) -> np.ndarray:
    """Chain-hash broadcastable integer keys into uint64 words."""
    arrays = np.broadcast_arrays(*[np.asarray(k, dtype=np.uint64) for k in keys])
    h = np.zeros(arrays[0].shape, dtype=np.uint64)
    for a in arrays:
        h = mix64(h ^ a)
    return h


def uniform(*keys) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    h = hash_keys(*keys)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normal(*keys) -> np.ndarray:
    """Standard normal draws via Box-Muller on two hashed uniforms."""
    u1 = uniform(*keys, 0)
    u2 = uniform(*keys, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
