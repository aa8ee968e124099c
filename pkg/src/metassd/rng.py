"""Seeded, splittable random streams.

Every stochastic object in the package is drawn from an ``RngStream``.  A
stream is identified by a root seed plus a path of child indices, and is
backed by the counter-based Philox generator, so a child's samples depend
only on ``(seed, path)`` and never on how many draws its siblings made.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RngStream:
    seed: int
    path: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, *self.path])
        object.__setattr__(self, "_gen", np.random.Generator(np.random.Philox(ss)))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def child(self, index: int) -> RngStream:
        """Independent sub-stream; the parent's state is left untouched."""
        return RngStream(self.seed, self.path + (int(index),))

    def derive_seed(self) -> int:
        """A 63-bit integer seed that names this stream's position."""
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, *self.path, 0x5EED])
        return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))

    # thin wrappers so call sites read naturally
    def normal(self, scale=1.0, size=None):
        return self._gen.normal(0.0, scale, size)

    def complex_normal(self, var, size=None) -> np.ndarray:
        """CN(0, var): real and imaginary parts independent N(0, var/2)."""
        s = np.sqrt(np.asarray(var, dtype=float) / 2.0)
        re = self._gen.standard_normal(size)
        im = self._gen.standard_normal(size)
        return s * re + 1j * (s * im)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)
