"""Reproducible Gaussian streams.

All randomness in the package flows through :class:`GaussianStream`, which
pairs numpy's PCG64 bit generator (whose raw 64-bit output is stable across
numpy releases) with a fixed Box-Muller transform:

* a raw word ``r`` becomes the uniform ``u = ((r >> 11) + 0.5) * 2**-53``,
  which lies strictly inside (0, 1);
* consecutive uniforms ``(u1, u2)`` become
  ``sqrt(-2 log u1) * cos(2 pi u2)`` followed by ``sqrt(-2 log u1) * sin(2 pi u2)``.

numpy's own ``standard_normal`` is not used because its algorithm is allowed
to change between versions.

Seeds are split into independent domains with ``SeedSequence`` spawn keys so
that, e.g., the Monte Carlo oracle can never replay the stream that generated
the weights.
"""

from __future__ import annotations

import numpy as np

WEIGHTS = 0
FEATURES = 1
ORACLE = 2
LANCZOS = 3
PROBES = 4

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 2.0**-53


def bit_generator(seed: int, domain: int, worker: int = 0) -> np.random.PCG64:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(domain), int(worker)))
    return np.random.PCG64(ss)


class GaussianStream:
    """Standard normal draws with a documented, split-invariant order.

    Drawing ``a`` values then ``b`` values yields exactly the same numbers as
    drawing ``a + b`` at once; an unused sine value is carried over between
    calls.
    """

    def __init__(self, seed: int, domain: int, worker: int = 0):
        self.seed = int(seed)
        self.domain = int(domain)
        self.worker = int(worker)
        self._bits = bit_generator(seed, domain, worker)
        self._spare: float | None = None

    def draw(self, n: int) -> np.ndarray:
        n = int(n)
        if n < 0:
            raise ValueError("cannot draw a negative number of values")
        out = np.empty(n, dtype=np.float64)
        start = 0
        if n and self._spare is not None:
            out[0] = self._spare
            self._spare = None
            start = 1
        need = n - start
        if need > 0:
            pairs = (need + 1) // 2
            raw = self._bits.random_raw(2 * pairs)
            u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
            radius = np.sqrt(-2.0 * np.log(u[0::2]))
            angle = _TWO_PI * u[1::2]
            z = np.empty(2 * pairs, dtype=np.float64)
            z[0::2] = radius * np.cos(angle)
            z[1::2] = radius * np.sin(angle)
            out[start:] = z[:need]
            if 2 * pairs > need:
                self._spare = float(z[-1])
        return out

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        return self.draw(int(np.prod(shape))).reshape(shape)
