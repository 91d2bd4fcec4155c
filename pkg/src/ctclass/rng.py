"""Seedable, platform-pinned random number generation.

Simulation noise must be bit-reproducible from a seed, independent of the
host platform, so we pin the full stack here instead of relying on an
opaque library generator:

* stream seeding: splitmix64 (Steele et al.), which also derives
  independent per-run seeds from a base seed and a run index,
* uniform generation: xoshiro256++ (Blackman & Vigna),
* normal variates: Box-Muller, mapping two 53-bit uniforms to a pair of
  independent standard normals (u1 drawn from (0, 1] so log(u1) is finite).

All kernels are numba-compiled and use only uint64/float64 arithmetic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi
# (x >> 11) spans [0, 2^53); scale maps it into [0, 1)
_INV_2_53 = 2.0 ** -53


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def seed_state(seed):
    """Expand a uint64 seed into a xoshiro256++ state via splitmix64."""
    state = np.empty(4, dtype=np.uint64)
    s = np.uint64(seed)
    for i in range(4):
        s = s + _GOLDEN
        state[i] = _mix64(s)
    if state[0] == 0 and state[1] == 0 and state[2] == 0 and state[3] == 0:
        state[0] = _GOLDEN
    return state


@njit(cache=True)
def _rotl(x, k):
    return (x << k) | (x >> (np.uint64(64) - k))


@njit(cache=True)
def next_u64(state):
    """Advance the xoshiro256++ state in place and return one uint64."""
    result = _rotl(state[0] + state[3], np.uint64(23)) + state[0]
    t = state[1] << np.uint64(17)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], np.uint64(45))
    return result


@njit(cache=True)
def next_double(state):
    """Uniform double in [0, 1) from the top 53 bits."""
    return float(next_u64(state) >> np.uint64(11)) * _INV_2_53


@njit(cache=True)
def normal_pair(state):
    """Two independent standard normals via Box-Muller."""
    a = next_u64(state)
    b = next_u64(state)
    u1 = (float(a >> np.uint64(11)) + 1.0) * _INV_2_53  # (0, 1]
    u2 = float(b >> np.uint64(11)) * _INV_2_53  # [0, 1)
    r = math.sqrt(-2.0 * math.log(u1))
    phi = _TWO_PI * u2
    return r * math.cos(phi), r * math.sin(phi)


@njit(cache=True)
def _fill_normals(out, seed):
    state = seed_state(seed)
    n = out.shape[0]
    i = 0
    while i + 1 < n:
        z0, z1 = normal_pair(state)
        out[i] = z0
        out[i + 1] = z1
        i += 2
    if i < n:
        z0, z1 = normal_pair(state)
        out[i] = z0


def normals(seed: int, n: int) -> np.ndarray:
    """Array of n standard normals for the given seed."""
    out = np.empty(n, dtype=np.float64)
    _fill_normals(out, np.uint64(seed))
    return out


def uniforms(seed: int, n: int) -> np.ndarray:
    """Array of n uniforms in [0, 1) for the given seed."""
    state = seed_state(np.uint64(seed))
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = next_double(state)
    return out


def derive_seed(base: int, index: int) -> int:
    """Deterministic child seed for run `index` under a base seed.

    Child streams are splitmix64 outputs at offsets of the golden-ratio
    increment, so distinct indices give uncorrelated xoshiro seeds.
    """
    if index < 0:
        raise ValueError("index must be non-negative")
    z = (int(base) + (index + 1) * int(_GOLDEN)) & _U64_MASK
    return int(_mix64(np.uint64(z)))


# Pure-python reference implementations, used by the test suite to
# cross-check the compiled kernels.


def _py_mix64(z: int) -> int:
    z &= _U64_MASK
    z = ((z ^ (z >> 30)) * int(_MIX1)) & _U64_MASK
    z = ((z ^ (z >> 27)) * int(_MIX2)) & _U64_MASK
    return (z ^ (z >> 31)) & _U64_MASK


def _py_seed_state(seed: int) -> list[int]:
    s = int(seed) & _U64_MASK
    state = []
    for _ in range(4):
        s = (s + int(_GOLDEN)) & _U64_MASK
        state.append(_py_mix64(s))
    if not any(state):
        state[0] = int(_GOLDEN)
    return state


def _py_rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _U64_MASK


def _py_next_u64(state: list[int]) -> int:
    result = (_py_rotl((state[0] + state[3]) & _U64_MASK, 23) + state[0]) & _U64_MASK
    t = (state[1] << 17) & _U64_MASK
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _py_rotl(state[3], 45)
    return result
