"""Counter-based random streams for reproducible parallel Monte Carlo.

Philox-4x32-10, keyed by a 64-bit seed, with the counter laid out as
(path id low, path id high, draw index, purpose tag).  Every path owns an
independent stream per purpose (chain sampling vs. diffusion increments), so
results are bit-identical for any worker count, batch split or path subset.

Each block yields two 53-bit uniforms; normal pairs come from Box-Muller.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = [
    "PURPOSE_CHAIN",
    "PURPOSE_DIFFUSION",
    "uniform_pair",
    "gauss_pair",
    "uniforms",
    "gaussians",
]

PURPOSE_CHAIN = 0
PURPOSE_DIFFUSION = 1

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_TWO_NEG53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586


@njit(inline="always", cache=True)
def _philox4x32(k0, k1, c0, c1, c2, c3):
    for _ in range(10):
        hi0 = np.uint32((_M0 * np.uint64(c0)) >> np.uint64(32))
        lo0 = np.uint32(np.uint32(_M0) * c0)
        hi1 = np.uint32((_M1 * np.uint64(c2)) >> np.uint64(32))
        lo1 = np.uint32(np.uint32(_M1) * c2)
        n0 = hi1 ^ c1 ^ k0
        n1 = lo1
        n2 = hi0 ^ c3 ^ k1
        n3 = lo0
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@njit(inline="always", cache=True)
def uniform_pair(seed, stream, purpose, ctr):
    """Two uniforms in (0, 1] and [0, 1) from block ``ctr`` of the stream."""
    k0 = np.uint32(seed & np.uint64(0xFFFFFFFF))
    k1 = np.uint32((seed >> np.uint64(32)) & np.uint64(0xFFFFFFFF))
    r0, r1, r2, r3 = _philox4x32(
        k0,
        k1,
        np.uint32(stream & np.uint64(0xFFFFFFFF)),
        np.uint32((stream >> np.uint64(32)) & np.uint64(0xFFFFFFFF)),
        np.uint32(ctr),
        np.uint32(purpose),
    )
    u64a = (np.uint64(r0) << np.uint64(32)) | np.uint64(r1)
    u64b = (np.uint64(r2) << np.uint64(32)) | np.uint64(r3)
    ua = (np.float64(u64a >> np.uint64(11)) + 1.0) * _TWO_NEG53  # (0, 1]
    ub = np.float64(u64b >> np.uint64(11)) * _TWO_NEG53  # [0, 1)
    return ua, ub


@njit(inline="always", cache=True)
def gauss_pair(seed, stream, purpose, ctr):
    """Two independent standard normals via Box-Muller on one Philox block."""
    ua, ub = uniform_pair(seed, stream, purpose, ctr)
    r = math.sqrt(-2.0 * math.log(ua))
    a = _TWO_PI * ub
    return r * math.cos(a), r * math.sin(a)


@njit(cache=True)
def uniforms(seed, stream, purpose, start, n):
    """n uniforms in (0, 1] from consecutive blocks; test/diagnostic helper."""
    out = np.empty(n, dtype=np.float64)
    for i in range((n + 1) // 2):
        ua, ub = uniform_pair(np.uint64(seed), np.uint64(stream), purpose, start + i)
        out[2 * i] = ua
        if 2 * i + 1 < n:
            out[2 * i + 1] = ub if ub > 0.0 else _TWO_NEG53
    return out


@njit(cache=True)
def gaussians(seed, stream, purpose, start, n):
    """n standard normals from consecutive blocks; test/diagnostic helper."""
    out = np.empty(n, dtype=np.float64)
    for i in range((n + 1) // 2):
        ga, gb = gauss_pair(np.uint64(seed), np.uint64(stream), purpose, start + i)
        out[2 * i] = ga
        if 2 * i + 1 < n:
            out[2 * i + 1] = gb
    return out
