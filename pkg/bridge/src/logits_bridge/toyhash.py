"""Toy-hash logits, reimplemented from the pinned definition.

This file intentionally does not import the decoding engine: reproducing
its fixtures bit for bit from the documented constants is what proves the
wire protocol carries enough information.

Definition:
* key = FNV-1a-64 (offset 0xcbf29ce484222325, prime 0x100000001b3) over the
  last min(len, m) token ids, serialized as 4 little-endian bytes each,
  XORed with the seed.
* logit[v] = float32(10*u - 5), u = (splitmix64(key ^ v) >> 11) * 2^-53,
  where splitmix64(x) mixes x + 0x9E3779B97F4A7C15.
* +20 bias on delimiter_first_id when len(context) >= force_after and that
  id does not occur in the context (termination guarantee).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

_U64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class ToyHashModel:
    def __init__(
        self,
        vocab_size: int,
        seed: int = 0,
        m: int = 8,
        force_after: int = 1 << 30,
        delimiter_first_id: int = 0,
        eos_id: int = 1,
        pad_id: int = 0,
        max_context: int = 1 << 16,
    ) -> None:
        if m < 1:
            raise ValueError("hash window m must be >= 1")
        self.vocab_size = vocab_size
        self.seed = seed
        self.m = m
        self.force_after = force_after
        self.delimiter_first_id = delimiter_first_id
        self.eos_id = eos_id
        self.pad_id = pad_id
        self.max_context = max_context

    def meta(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "eos_id": self.eos_id,
            "pad_id": self.pad_id,
            "supports_mask": True,
            "max_context": self.max_context,
            "model": "toy-hash",
        }

    def row(self, context: Sequence[int]) -> np.ndarray:
        ctx = [int(t) for t in context]
        h = _FNV_OFFSET
        for t in ctx[-self.m:]:
            for b in t.to_bytes(4, "little"):
                h = ((h ^ b) * _FNV_PRIME) & _U64
        key = h ^ (self.seed & _U64)
        with np.errstate(over="ignore"):
            z = np.bitwise_xor(np.uint64(key), np.arange(self.vocab_size, dtype=np.uint64))
            z = (z + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(_U64)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
        vals = 10.0 * u - 5.0
        if len(ctx) >= self.force_after and self.delimiter_first_id not in ctx:
            vals[self.delimiter_first_id] += 20.0
        return vals.astype(np.float32)

    def logits(self, contexts: Sequence[Sequence[int]]) -> list[np.ndarray]:
        return [self.row(c) for c in contexts]

    def logits_masked(self, rows, mask) -> list[np.ndarray]:
        stripped = [
            [t for t, keep in zip(row, m) if keep] for row, m in zip(rows, mask)
        ]
        return self.logits(stripped)
