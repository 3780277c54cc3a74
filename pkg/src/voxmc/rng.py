"""Per-photon xorshift128+ streams seeded through a splitmix64 finalizer.

Every photon owns the stream ``derive_stream(master_seed, photon_index)``, so
a trajectory depends only on the seed and the photon's global index, never on
which worker happened to simulate it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_ZERO_REMAP = np.uint64(0x853C49E6748FEA9B)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S23 = np.uint64(23)
_S18 = np.uint64(18)
_S5 = np.uint64(5)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, nogil=True)
def _splitmix_finalize(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def seed_state(master_seed, stream_id, state):
    """Fill ``state`` (uint64[2]) for the given seed pair, in place."""
    key = master_seed ^ (stream_id * _GOLDEN)
    s0 = _splitmix_finalize(key + _GOLDEN)
    s1 = _splitmix_finalize(key + _GOLDEN + _GOLDEN)
    if s0 == 0 and s1 == 0:
        s0 = _ZERO_REMAP
    state[0] = s0
    state[1] = s1


@njit(cache=True, nogil=True)
def next_u64(state):
    s1 = state[0]
    s0 = state[1]
    result = s0 + s1
    state[0] = s0
    s1 ^= s1 << _S23
    state[1] = s1 ^ s0 ^ (s1 >> _S18) ^ (s0 >> _S5)
    return result


@njit(cache=True, nogil=True)
def next_float(state):
    """Uniform double in [0, 1) from the top 53 bits of the next output."""
    # the shifted value fits in 53 bits, so a signed conversion is exact
    return np.float64(np.int64(next_u64(state) >> _S11)) * _INV53


def _as_u64(value: int) -> np.uint64:
    return np.uint64(int(value) & MASK64)


@dataclass
class RngStream:
    """Mutable generator state owned by a single worker at a time."""

    stream_id: int
    state: np.ndarray = field(repr=False)

    def copy(self) -> "RngStream":
        return RngStream(self.stream_id, self.state.copy())

    def next_u64(self) -> int:
        return int(next_u64(self.state))

    def __eq__(self, other):
        if not isinstance(other, RngStream):
            return NotImplemented
        return self.stream_id == other.stream_id and bool(np.array_equal(self.state, other.state))


def derive_stream(master_seed: int, stream_id: int) -> RngStream:
    state = np.zeros(2, dtype=np.uint64)
    seed_state(_as_u64(master_seed), _as_u64(stream_id), state)
    return RngStream(int(stream_id) & MASK64, state)


def next_unit(stream: RngStream) -> float:
    return float(next_float(stream.state))


def uniform_array(stream: RngStream, n: int) -> np.ndarray:
    """Draw ``n`` consecutive uniforms from ``stream`` (advances it)."""
    return _fill_uniform(stream.state, np.empty(n))


@njit(cache=True, nogil=True)
def _fill_uniform(state, out):
    for i in range(out.shape[0]):
        out[i] = next_float(state)
    return out
