"""Self-contained 64-bit PRNG used everywhere randomness is needed.

Corpus generation must be byte-identical across runs and platforms, so we
avoid ``random``/``numpy`` streams and use a splitmix64 generator with
explicit integer arithmetic. Streams can be forked per session ordinal so
individual sessions are reproducible in isolation.
"""

from __future__ import annotations

from typing import Sequence, TypeVar

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

T = TypeVar("T")


def mix64(x: int) -> int:
    """splitmix64 finalizer: a strong 64-bit avalanche mix."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def stream_seed(seed: int, ordinal: int) -> int:
    """Derive an independent child seed from (seed, ordinal)."""
    return mix64((seed & _MASK64) ^ mix64((ordinal + 1) * _GOLDEN))


class SplitMix64:
    """Deterministic splitmix64 generator."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randrange(self, n: int) -> int:
        """Integer in [0, n). Modulo bias is negligible for n << 2**64."""
        if n <= 0:
            raise ValueError("randrange() requires n >= 1")
        return self.next_u64() % n

    def randint(self, a: int, b: int) -> int:
        """Integer in [a, b], both ends inclusive."""
        if b < a:
            raise ValueError("randint() requires a <= b")
        return a + self.randrange(b - a + 1)

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def choice(self, seq: Sequence[T]) -> T:
        if not seq:
            raise ValueError("choice() on empty sequence")
        return seq[self.randrange(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, ordinal: int) -> "SplitMix64":
        """Independent child stream; does not advance this generator."""
        return SplitMix64(stream_seed(self._state, ordinal))
