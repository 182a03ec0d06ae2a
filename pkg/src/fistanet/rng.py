"""Deterministic random number generation.

Cross-platform reproducibility is a hard requirement (training reruns must be
byte-identical), so we do not rely on any standard-library generator.  The
generator here is counter-based SplitMix64: output i is a bijective finalizer
applied to ``s0 + (i+1)*GAMMA mod 2^64``.  It has no sequential state beyond
the counter, so bulk generation vectorizes directly over numpy uint64 arrays
and arbitrary streams can be split off cheaply.

Reference values for the finalizer (the murmur-style mix used by SplitMix64)
are pinned in the tests.
"""

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_INV_2_53 = float(2.0 ** -53)


def _mix64(z):
    """SplitMix64 finalizer on uint64 scalars or arrays."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Seeded counter-based generator.

    Two instances with equal seeds produce equal sequences on any platform.
    An instance is single-owner: do not share one across concurrent tasks;
    use spawn() to derive independent child streams instead.
    """

    def __init__(self, seed):
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        # 1-element array: numpy scalar uint64 arithmetic warns on wraparound
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        s = np.array([self.seed], dtype=np.uint64)
        self._s0 = _mix64(s)[0]
        self._count = 0

    def _next_words(self, n):
        base = np.uint64(self._count)
        idx = np.arange(1, n + 1, dtype=np.uint64) + base
        self._count += n
        return _mix64(self._s0 + idx * _GAMMA)

    def uniform(self, shape=None):
        """Uniform draws in [0, 1): scalar for shape=None, else an array."""
        if shape is None:
            return float(self._next_words(1)[0] >> np.uint64(11)) * _INV_2_53
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        w = self._next_words(n) >> np.uint64(11)
        return (w.astype(np.float64) * _INV_2_53).reshape(shape)

    def normal(self, shape=None):
        """Standard normal draws via Box-Muller.

        Each call consumes an even number of counter slots (pairs are never
        carried across calls), keeping call sequences reproducible.
        """
        scalar = shape is None
        if scalar:
            shape = (1,)
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        npairs = (n + 1) // 2
        w = self._next_words(2 * npairs)
        # u1 in (0, 1] so log() is finite; u2 in [0, 1)
        u1 = (w[:npairs] >> np.uint64(11)).astype(np.float64)
        u1 = (u1 + 1.0) * _INV_2_53
        u2 = (w[npairs:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
        return float(out[0]) if scalar else out.reshape(shape)

    def integer_below(self, bound):
        """Uniform integer in [0, bound), bias-free via rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        if bound == 1:
            return 0
        nbits = int(bound - 1).bit_length()
        mask = np.uint64((1 << nbits) - 1)
        while True:
            v = int(self._next_words(1)[0] & mask)
            if v < bound:
                return v

    def permutation(self, n):
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.integer_below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self, index):
        """Independent child stream number `index` (deterministic)."""
        if index < 0:
            raise ValueError("spawn index must be non-negative")
        key = ((index + 1) * 0xD1B54A32D192ED03) & 0xFFFFFFFFFFFFFFFF
        child = Rng.__new__(Rng)
        child.seed = int(self._s0) ^ key
        child._s0 = _mix64(np.array([child.seed], dtype=np.uint64))[0]
        child._count = 0
        return child
