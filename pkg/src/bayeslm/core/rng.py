"""Counter-based random streams.

Every draw is generated from ``(seed, path, counter)`` alone, so a stream is
reproducible regardless of what other streams did before it.  Named child
streams give each Bayesian site its own independent substream.
"""

import zlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def _words(value):
    value = int(value) & 0xFFFFFFFFFFFFFFFF
    return [value & _MASK32, value >> 32]


class RngStream:
    def __init__(self, seed, counter=0, path=()):
        self.seed = int(seed)
        self.counter = int(counter)
        self.path = tuple(path)
        self._children = {}

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter}, path={self.path})"

    def child(self, name):
        """Persistent named substream; the same name always returns the same stream."""
        stream = self._children.get(name)
        if stream is None:
            tag = zlib.crc32(name.encode("utf-8"))
            stream = RngStream(self.seed, 0, self.path + (tag,))
            self._children[name] = stream
        return stream

    def fork(self, index):
        """Uncached substream for an integer index (e.g. one per training step)."""
        return RngStream(self.seed, 0, self.path + (_MASK32,) + tuple(_words(index)))

    def generator(self):
        """A numpy Generator for the current counter value; advances the counter."""
        entropy = _words(self.seed) + list(self.path) + _words(self.counter)
        self.counter += 1
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def normal(self, shape):
        return self.generator().standard_normal(shape)

    def uniform(self, low, high, shape):
        return self.generator().uniform(low, high, shape)

    def permutation(self, n):
        return self.generator().permutation(n)

    def integers(self, low, high, size=None):
        return self.generator().integers(low, high, size)

    def dropout_mask(self, shape, rate):
        """Inverted-dropout mask: zeros with probability ``rate``, else ``1/(1-rate)``."""
        keep = self.generator().random(shape) >= rate
        return keep / (1.0 - rate)

    def state(self):
        return {"seed": self.seed, "counter": self.counter, "path": list(self.path),
                "children": {k: v.state() for k, v in self._children.items()}}
