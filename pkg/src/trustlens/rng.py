"""Deterministic, platform-independent pseudo-random numbers.

The generator is an 8-lane xoshiro256** whose lane states are seeded from a
splitmix64 stream, all in explicit uint64 arithmetic so the integer stream is
bit-identical on every platform and numpy build.  Output k of the interleaved
stream is value ``k // 8`` of lane ``k % 8``; lanes advance together as
vectorized uint64 numpy ops.

Derived floats (uniforms, normals) are IEEE-754 double operations on that
integer stream; the integer stream itself is the portability contract.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_LANES = 8

_U5 = np.uint64(5)
_U9 = np.uint64(9)
_U17 = np.uint64(17)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, (z ^ (z >> 31))


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Rng:
    """Seedable deterministic generator with an interleaved 8-lane stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        state = self.seed
        lanes = np.empty((4, _LANES), dtype=np.uint64)
        for lane in range(_LANES):
            for j in range(4):
                state, v = splitmix64(state)
                lanes[j, lane] = v
        self._s = lanes
        self._pending = np.empty(0, dtype=np.uint64)

    def spawn(self, tag: str) -> "Rng":
        """Derive an independent child stream keyed by a string tag."""
        return Rng(splitmix64(self.seed ^ _fnv1a64(tag.encode("utf-8")))[1])

    def _steps(self, n_steps: int) -> np.ndarray:
        """Advance all lanes n_steps times; returns (n_steps, LANES) uint64."""
        s0, s1, s2, s3 = (self._s[j].copy() for j in range(4))
        out = np.empty((n_steps, _LANES), dtype=np.uint64)
        for i in range(n_steps):
            out[i] = _rotl(s1 * _U5, 7) * _U9
            t = s1 << _U17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
        self._s = np.stack([s0, s1, s2, s3])
        return out

    def raw(self, n: int) -> np.ndarray:
        """Next n values of the interleaved uint64 stream."""
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        missing = n - self._pending.size
        if missing > 0:
            fresh = self._steps(-(-missing // _LANES)).reshape(-1)
            self._pending = np.concatenate([self._pending, fresh])
        out, self._pending = self._pending[:n], self._pending[n:].copy()
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniforms in [low, high) with 53-bit resolution."""
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n: int, std: float = 1.0) -> np.ndarray:
        """Standard normals via Box-Muller on uniform pairs."""
        m = -(-n // 2)
        u1 = (self.raw(m) >> np.uint64(11)).astype(np.float64)
        u1 = (u1 + 1.0) * 2.0**-53  # (0, 1], keeps log finite
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return std * z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) via argsort of uniforms."""
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound) derived from the uniform stream."""
        return np.minimum((self.uniform(n) * bound).astype(np.int64), bound - 1)
