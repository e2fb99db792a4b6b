"""Named random streams derived from one master seed.

Every consumer of randomness asks for a stream by name, e.g.
``streams.get("learner", player, h, s)``. Streams are derived with
:class:`numpy.random.SeedSequence` spawn keys, so adding a new consumer never
shifts the draws seen by an existing one.
"""

import zlib

import numpy as np


def _key_part(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


class RngStreams:
    """Factory of independent, reproducible generators keyed by name."""

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._cache = {}

    def get(self, *key):
        """Return the (cached) generator for ``key``."""
        if key not in self._cache:
            self._cache[key] = self.fresh(*key)
        return self._cache[key]

    def fresh(self, *key):
        """Return a new generator for ``key``, restarting its sequence."""
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_key_part(k) for k in key))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *key):
        """A sub-factory whose streams are disjoint from this one's."""
        seed = self.fresh("child", *key).integers(2**63)
        return RngStreams(seed)

    def __repr__(self):
        return f"RngStreams(seed={self.seed})"


def as_streams(rng):
    """Coerce ``None``, an int seed, a Generator or RngStreams to RngStreams."""
    if isinstance(rng, RngStreams):
        return rng
    if rng is None:
        return RngStreams(0)
    if isinstance(rng, np.random.Generator):
        return RngStreams(int(rng.integers(2**63)))
    if isinstance(rng, (int, np.integer)):
        return RngStreams(int(rng))
    raise TypeError(f"cannot build random streams from {type(rng).__name__}")


def as_generator(rng):
    """Coerce ``None``, an int seed, RngStreams or a Generator to a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStreams):
        return rng.get("default")
    return np.random.default_rng(rng)
