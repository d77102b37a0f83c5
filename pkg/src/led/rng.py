"""Counter-based deterministic random streams.

A stream is an immutable (seed, stream_id, counter) triple: drawing returns
the sample together with the advanced stream, so any draw can be replayed
from its triple alone, on any platform. Parallel attempts should each use
their own child stream obtained from ``spawn``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RandomStream:
    """Stateless generator: the value at (seed, stream_id, counter) is fixed forever."""

    seed: int
    stream_id: int = 0
    counter: int = 0

    def _word(self) -> int:
        h = _mix64((self.seed & _MASK64) + _GOLDEN)
        h = _mix64(h ^ (self.stream_id & _MASK64))
        return _mix64(h ^ ((self.counter & _MASK64) * _GOLDEN))

    def next_uniform(self) -> tuple[float, "RandomStream"]:
        """One uniform in [0, 1); advances the counter by exactly one."""
        u = (self._word() >> 11) * (1.0 / (1 << 53))
        return u, self.advance(1)

    def advance(self, n: int = 1) -> "RandomStream":
        return replace(self, counter=self.counter + n)

    def spawn(self, index: int) -> "RandomStream":
        """Child stream `index`; children of distinct indices are decorrelated."""
        child = _mix64((self.stream_id & _MASK64) * _GOLDEN + index + 1)
        return RandomStream(self.seed, child, 0)
