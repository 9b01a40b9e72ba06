"""Counter-based random streams.

Every random number in the package is a pure function of
``(seed, purpose, episode, t, i, k)``.  The generator is Philox4x32-10, so a
rollout's noise can be produced by any worker, in any order, and still come
out bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._vmath import log_uint, sincos

# 32-bit words are carried in uint64 registers so the rounds vectorise.
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
_TOP53 = np.uint64(1 << 53)

# Stream purposes, stored in the top byte of the fourth counter word.
ROLLOUT = 0
SELECTION = 1
REFERENCE = 2
GENERIC = 3

MAX_EPISODES = 1 << 24
TWO_PI = 2.0 * np.pi


@njit(inline="always", error_model="numpy")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds; inputs and outputs are 32-bit values held in uint64."""
    x0 = np.uint64(c0)
    x1 = np.uint64(c1)
    x2 = np.uint64(c2)
    x3 = np.uint64(c3)
    key0 = np.uint64(k0)
    key1 = np.uint64(k1)
    for _ in range(10):
        # the masks let LLVM use 32x32->64 vector multiplies
        p0 = (x0 & _MASK) * _M0
        p1 = (x2 & _MASK) * _M1
        x0, x1, x2, x3 = (p1 >> _SHIFT) ^ x1 ^ key0, p1 & _MASK, (p0 >> _SHIFT) ^ x3 ^ key1, p0 & _MASK
        key0 = (key0 + _W0) & _MASK
        key1 = (key1 + _W1) & _MASK
    return x0, x1, x2, x3


@njit(inline="always", error_model="numpy")
def bits53_pair(c0, c1, c2, c3, k0, k1):
    r0, r1, r2, r3 = philox4x32(c0, c1, c2, c3, k0, k1)
    return (r0 << np.uint64(21)) | (r1 >> np.uint64(11)), (r2 << np.uint64(21)) | (r3 >> np.uint64(11))


@njit(inline="always", error_model="numpy")
def uniform_pair(c0, c1, c2, c3, k0, k1):
    """Two uniforms on ``[0, 1)`` with 53 bits each."""
    a, b = bits53_pair(c0, c1, c2, c3, k0, k1)
    return np.int64(a) * (1.0 / 9007199254740992.0), np.int64(b) * (1.0 / 9007199254740992.0)


@njit(inline="always", error_model="numpy")
def normal_pair(c0, c1, c2, c3, k0, k1):
    """Two independent standard normals (Box-Muller on ``1 - u1`` in ``(0, 1]``)."""
    a, b = bits53_pair(c0, c1, c2, c3, k0, k1)
    rad = np.sqrt(-2.0 * log_uint(_TOP53 - a, 53))
    s, c = sincos(TWO_PI * (np.int64(b) * (1.0 / 9007199254740992.0)))
    return rad * c, rad * s


@njit(nogil=True, cache=True, error_model="numpy")
def _fill(out, normal, k, nblocks, c2, c3, k0, k1):
    n, dim = out.shape
    for b in range(nblocks):
        c0 = np.uint64(k * nblocks + b)
        j = 2 * b
        for i in range(n):
            if normal:
                x, y = normal_pair(c0, np.uint64(i), c2, c3, k0, k1)
            else:
                x, y = uniform_pair(c0, np.uint64(i), c2, c3, k0, k1)
            out[i, j] = x
            if j + 1 < dim:
                out[i, j + 1] = y


@njit(cache=True)
def philox_block(c0, c1, c2, c3, k0, k1):
    return philox4x32(c0, c1, c2, c3, k0, k1)


def split_seed(seed: int) -> tuple[np.uint64, np.uint64]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def tag(purpose: int, episode: int) -> np.uint64:
    if not 0 <= episode < MAX_EPISODES:
        raise ValueError(f"episode index {episode} out of range [0, {MAX_EPISODES})")
    return np.uint64((purpose << 24) | episode)


@dataclass(frozen=True)
class Stream:
    """Lineage of one episode: a master seed plus an episode index.

    Draw ``k`` of rollout ``i`` launched at time ``t`` is addressed by the
    Philox counter ``(k * blocks + b, i, t, purpose | episode)``.
    """

    seed: int
    episode: int = 0

    @property
    def key(self) -> tuple[np.uint64, np.uint64]:
        return split_seed(self.seed)

    def noise(self, purpose: int, t: int, k: int, n: int, dim: int,
              kind: str = "normal") -> np.ndarray:
        """Noise for rollouts ``0..n-1`` at draw index ``k``; shape ``(n, dim)``."""
        out = np.empty((n, dim))
        if dim == 0:
            return out
        k0, k1 = self.key
        _fill(out, kind == "normal", k, (dim + 1) // 2, np.uint64(t),
              tag(purpose, self.episode), k0, k1)
        return out

    def uniform(self, purpose: int, t: int, i: int = 0, k: int = 0) -> float:
        k0, k1 = self.key
        u, _ = _uniform(np.uint64(k), np.uint64(i), np.uint64(t), tag(purpose, self.episode), k0, k1)
        return float(u)

    def child(self, episode: int) -> "Stream":
        return Stream(self.seed, episode)


@njit(cache=True)
def _uniform(c0, c1, c2, c3, k0, k1):
    return uniform_pair(c0, c1, c2, c3, k0, k1)
