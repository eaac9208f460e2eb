"""Portable counter-based random number generator.

Corpora and model initializations must reproduce bit-for-bit across runs
and platforms, so we avoid numpy's Generator (whose stream layout is an
implementation detail) and use a splitmix64-style counter generator:

    u64(i) = mix64(seed + (i + 1) * GOLDEN)

with the standard splitmix64 finalizer constants.  Gaussian variates come
from the Marsaglia polar method driven by the same uniform stream, so the
consumption order (and therefore every draw) is fully determined by
(seed, call sequence).
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)

_U53 = float(2**53)


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on an array of uint64."""
    z = x.astype(np.uint64)
    z ^= z >> np.uint64(30)
    z *= MIX1
    z ^= z >> np.uint64(27)
    z *= MIX2
    z ^= z >> np.uint64(31)
    return z


class CounterRng:
    """Deterministic stream of uniforms/gaussians indexed by a 64-bit counter."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = np.uint64(0)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.uint64) + self.counter
        self.counter += np.uint64(n)
        with np.errstate(over="ignore"):
            return mix64(self.seed + idx * GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms in [0, 1) with 53-bit mantissas."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) / _U53

    def normal(self, n: int) -> np.ndarray:
        """n standard gaussians via the polar (Marsaglia) method."""
        out = np.empty(n, dtype=np.float64)
        filled = 0
        while filled < n:
            need_pairs = (n - filled + 1) // 2
            # polar acceptance rate is pi/4; over-draw to limit refills
            m = max(int(need_pairs / 0.78) + 8, 16)
            u = self.uniform(2 * m).reshape(m, 2) * 2.0 - 1.0
            s = u[:, 0] ** 2 + u[:, 1] ** 2
            ok = (s > 0.0) & (s < 1.0)
            ua, sa = u[ok], s[ok]
            f = np.sqrt(-2.0 * np.log(sa) / sa)
            z = np.empty(2 * len(sa))
            z[0::2] = ua[:, 0] * f
            z[1::2] = ua[:, 1] * f
            take = min(len(z), n - filled)
            out[filled:filled + take] = z[:take]
            filled += take
        return out

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normal(rows * cols).reshape(rows, cols)

    def uniform_range(self, n: int, lo: float, hi: float) -> np.ndarray:
        return lo + (hi - lo) * self.uniform(n)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound) by rejection-free modulo on 64-bit words.

        Bias is < bound / 2**64, negligible for corpus-scale bounds.
        """
        return (self._raw(n) % np.uint64(bound)).astype(np.int64)

    def choice(self, pool: int, k: int) -> np.ndarray:
        """k distinct indices from range(pool), in ascending order."""
        if k > pool:
            raise ValueError("cannot choose %d from %d" % (k, pool))
        # seeded partial Fisher-Yates
        perm = np.arange(pool, dtype=np.int64)
        draws = self.integers(k, 1 << 62)
        for i in range(k):
            j = i + int(draws[i] % np.uint64(pool - i))
            perm[i], perm[j] = perm[j], perm[i]
        return np.sort(perm[:k])

    def unit_vectors(self, n: int, dim: int) -> np.ndarray:
        """n rows uniform on the unit sphere in R^dim."""
        g = self.normal_matrix(n, dim)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return g / norms
