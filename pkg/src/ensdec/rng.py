"""Seeded pseudo-random generator with a pinned algorithm.

Decode transcripts must be reproducible across runs, platforms and
independent re-implementations, so the generator is fully specified here
rather than delegated to a stdlib/numpy generator whose stream is an
implementation detail:

* ``splitmix64(x)`` is the first output of a SplitMix64 stream seeded with
  ``x``: ``z = x + 0x9E3779B97F4A7C15``, then ``z = (z ^ z>>30) *
  0xBF58476D1CE4E5B9``, ``z = (z ^ z>>27) * 0x94D049BB133111EB``,
  ``return z ^ z>>31`` (all mod 2^64).
* ``Rng`` is xoshiro256** 1.0. Its four state words are the first four
  outputs of a SplitMix64 stream seeded with the seed.
* ``next_f53()`` maps a draw to [0, 1) via ``(u64 >> 11) * 2**-53``.
* Per-trace thinking streams use sub-seed ``seed ^ splitmix64(k)`` for
  trace index k (see ``spawn``).
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """First output of a SplitMix64 stream seeded with ``x``."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** generator, SplitMix64-initialized.

    Identical seed yields an identical draw sequence. One instance is owned
    by exactly one decode session; it is never shared.
    """

    __slots__ = ("seed", "_s")

    def __init__(self, seed: int) -> None:
        self.seed = seed & _MASK
        s = []
        x = self.seed
        for _ in range(4):
            x = (x + _GOLDEN) & _MASK
            z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
            s.append(z ^ (z >> 31))
        if not any(s):  # xoshiro state must not be all zero
            s[0] = _GOLDEN
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_f53(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def spawn(self, k: int) -> "Rng":
        """Independent sub-stream for trace index ``k``."""
        return Rng(self.seed ^ splitmix64(k))
