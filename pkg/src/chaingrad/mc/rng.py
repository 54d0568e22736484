"""Counter-based random streams for reproducible, parallelizable runs.

A stream is addressed by (seed, stream_id) and keys a Philox generator, so
identical pairs reproduce identical draws and distinct pairs give
independent-quality streams.  Streams are factories: ``generator()``
returns a fresh generator positioned at the stream origin, so a stream
must feed at most one consumer; derive children for separate phases.

Hot loops consume uniforms through a fixed block protocol (pull BLOCK
doubles at a time, use them sequentially, discard the tail when the loop
returns).  Both Monte Carlo backends follow the same protocol with the
same arithmetic, which is what makes their outputs bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

BLOCK = 16384

_MASK64 = (1 << 64) - 1
_CHILD_STRIDE = 0x9E3779B97F4A7C15  # odd, so child ids cycle through all residues

__all__ = ["BLOCK", "RngStream"]


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> Generator:
        """A fresh generator at the origin of this stream."""
        return Generator(Philox(key=[self.seed & _MASK64, self.stream_id & _MASK64]))

    def child(self, k: int) -> "RngStream":
        """Derived stream for phase/worker k (k >= 0)."""
        if k < 0:
            raise ValueError("child index must be nonnegative")
        new_id = (self.stream_id * _CHILD_STRIDE + 1 + k) & _MASK64
        return RngStream(self.seed, new_id)
