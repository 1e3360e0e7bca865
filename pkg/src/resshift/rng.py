"""Deterministic random streams for every stochastic component.

All randomness in the toolkit flows through :class:`RandomStream`, a thin
layer over the counter-based Philox4x64-10 generator.  A stream is
identified by a *path*: the root seed followed by any mixture of strings
and integers (e.g. ``RandomStream(7, "degrade", 3, 12)``).  The path is
hashed with BLAKE2b into the 128-bit Philox key, so

* equal paths give bit-identical streams on every platform, and
* distinct paths give statistically independent streams,

which lets training derive per-step / per-example randomness as a pure
function of (seed, purpose, index) instead of threading mutable state
through the run.  That is what makes checkpoint resume exact.

Distributions are layered on the raw uniform stream with documented,
fixed algorithms:

* ``uniform``  - 53-bit doubles in [0, 1): ``(u64 >> 11) * 2**-53``.
* ``normal``   - Box-Muller transform on consecutive uniform pairs
  ``(u_{2i}, u_{2i+1})``: ``r = sqrt(-2 ln(1 - u_{2i}))`` and the pair of
  outputs ``r cos(2 pi u_{2i+1})``, ``r sin(2 pi u_{2i+1})``, filled into
  the requested shape in row-major order.
* ``poisson``  - Knuth's multiplicative method (one uniform per inner
  iteration, elements advance in lockstep row-major order).
"""

from __future__ import annotations

import hashlib

import numpy as np


def _path_key(path: tuple) -> np.ndarray:
    """Hash a stream path to a 2-word Philox key."""
    h = hashlib.blake2b(digest_size=16)
    for item in path:
        if isinstance(item, (bool, np.bool_)):
            raise TypeError("stream path items must be ints or strings")
        if isinstance(item, (int, np.integer)):
            h.update(b"i" + int(item).to_bytes(16, "little", signed=True))
        elif isinstance(item, str):
            h.update(b"s" + item.encode("utf-8") + b"\x00")
        else:
            raise TypeError(f"stream path items must be ints or strings, got {type(item)!r}")
    return np.frombuffer(h.digest(), dtype=np.uint64)


class RandomStream:
    """Seeded, forkable source of reproducible random numbers."""

    def __init__(self, *path):
        if not path:
            raise ValueError("a stream needs at least a root seed in its path")
        self.path = tuple(path)
        self._bitgen = np.random.Philox(key=_path_key(self.path))

    def child(self, *subpath) -> "RandomStream":
        """Derive an independent stream; does not consume from this one."""
        return RandomStream(*self.path, *subpath)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n)

    def uniform(self, shape=None) -> np.ndarray | float:
        """Doubles in [0, 1), one per element of `shape` (scalar if None)."""
        n = 1 if shape is None else int(np.prod(shape, dtype=np.int64))
        u = (self.raw(n) >> np.uint64(11)) * (2.0 ** -53)
        if shape is None:
            return float(u[0])
        return u.reshape(shape)

    def normal(self, shape=None) -> np.ndarray | float:
        """Standard normals via Box-Muller, row-major fill order."""
        n = 1 if shape is None else int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform((2 * pairs,))
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = (2.0 * np.pi) * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = z[:n]
        if shape is None:
            return float(z[0])
        return z.reshape(shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray | int:
        """Uniform ints in [low, high) via floor(u * span); bias is O(2^-53)."""
        if high <= low:
            raise ValueError("need high > low")
        u = self.uniform(shape)
        out = np.floor(np.asarray(u) * (high - low)).astype(np.int64) + low
        if shape is None:
            return int(out)
        return out

    def poisson(self, lam: np.ndarray) -> np.ndarray:
        """Poisson counts per element of `lam` (Knuth's method).

        All elements advance together: each round draws one uniform per
        still-active element in row-major order. Suitable for the moderate
        rates (lambda <= ~25) used by the shot-noise model.
        """
        lam = np.asarray(lam, dtype=np.float64)
        if np.any(lam < 0):
            raise ValueError("Poisson rate must be non-negative")
        flat = lam.reshape(-1)
        limit = np.exp(-flat)
        prod = np.ones_like(flat)
        counts = np.zeros(flat.shape, dtype=np.int64)
        active = prod > limit  # lambda == 0 finishes immediately
        while np.any(active):
            u = self.uniform((int(active.sum()),))
            prod[active] *= u
            newly_done = active.copy()
            newly_done[active] = prod[active] <= limit[active]
            counts[active & ~newly_done] += 1
            active &= ~newly_done
        return counts.reshape(lam.shape)

    def shuffle_order(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (argsort of n uniforms)."""
        return np.argsort(self.uniform((n,)), kind="stable")

    def __repr__(self):
        return f"RandomStream{self.path!r}"
