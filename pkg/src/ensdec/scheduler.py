"""Trace lifecycle: delimiter detection, N-to-K selection, suffix trimming.

A ``TracePool`` is owned by one scheduler; completion events are recorded
in an append-only log which is the authoritative ordering for early-ready
selection. Completion "rounds" count lockstep decoding steps: a trace that
closes with g generated tokens completed at round g, so the log is fully
reproducible from the traces themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import Phase, StrategyConfig, StrategyKind, Trace, Vocabulary

TRIM_BLOCK_MIN = 2
TRIM_BLOCK_MAX = 64


class NotReadyError(Exception):
    """Selection preconditions unmet; keep stepping the thinking phase."""


@dataclass
class TracePool:
    """N traces plus the ordered completion log."""

    traces: list[Trace]
    completion_order: list[int] = field(default_factory=list)
    completion_round: dict[int, int] = field(default_factory=dict)
    forced: set[int] = field(default_factory=set)

    def __post_init__(self) -> None:
        for i in self.completion_order:
            if self.traces[i].delimiter_end is None:
                raise ValueError(f"completed trace {i} has no delimiter_end")

    @property
    def ready(self) -> set[int]:
        return {i for i, t in enumerate(self.traces) if t.phase is not Phase.THINKING}

    def record_completion(self, index: int, round_: int) -> None:
        self.completion_order.append(index)
        self.completion_round[index] = round_


def detect_delimiter(generated: Sequence[int], vocab: Vocabulary) -> Optional[int]:
    """End index of the first delimiter occurrence in ``generated``.

    Tokens after the first occurrence never count toward reasoning length.
    Returns None when the delimiter is absent.
    """
    d = vocab.delimiter
    seq = tuple(generated)
    for end in range(len(d), len(seq) + 1):
        if seq[end - len(d): end] == d:
            return end
    return None


def ends_with_delimiter(generated: Sequence[int], vocab: Vocabulary) -> bool:
    d = vocab.delimiter
    seq = tuple(generated)
    return len(seq) >= len(d) and seq[-len(d):] == d


def trim_repeated_suffix(
    reasoning: Sequence[int],
    b_min: int = TRIM_BLOCK_MIN,
    b_max: int = TRIM_BLOCK_MAX,
) -> tuple[int, ...]:
    """Collapse a degenerate repeated suffix down to a single copy.

    Blocks are tried from ``b_max`` down to ``b_min``; at the first block
    length whose final block repeats m >= 2 times consecutively at the end,
    the maximal m is taken and m-1 copies are deleted. The input is token
    ids, not text: the delimiter must already be stripped by the caller.
    """
    if b_min < 1:
        raise ValueError(f"b_min must be >= 1, got {b_min}")
    if b_min > b_max:
        raise ValueError(f"b_min {b_min} > b_max {b_max}")
    seq = tuple(int(t) for t in reasoning)
    n = len(seq)
    for b in range(min(b_max, n // 2), b_min - 1, -1):
        block = seq[n - b:]
        m = 1
        while (m + 1) * b <= n and seq[n - (m + 1) * b: n - m * b] == block:
            m += 1
        if m >= 2:
            return seq[: n - (m - 1) * b]
    return seq


def select_traces(pool: TracePool, config: StrategyConfig) -> list[int]:
    """Choose the K trace indices to ensemble, sorted ascending.

    direct_merge passes all N=K through (all must be ready); early_ready
    takes the first K completions from the log; shortest_k waits for all N
    and takes the K smallest reasoning lengths, ties broken by index.
    """
    n = len(pool.traces)
    ready = pool.ready
    if config.kind is StrategyKind.DIRECT_MERGE:
        if len(ready) < n:
            raise NotReadyError(f"direct_merge needs all {n} traces ready, have {len(ready)}")
        chosen = list(range(n))
    elif config.kind is StrategyKind.EARLY_READY:
        if len(pool.completion_order) < config.k:
            raise NotReadyError(
                f"early_ready needs {config.k} completions, have {len(pool.completion_order)}"
            )
        chosen = sorted(pool.completion_order[: config.k])
    else:  # shortest_k
        if len(ready) < n:
            raise NotReadyError(f"shortest_k needs all {n} traces ready, have {len(ready)}")
        by_length = sorted(range(n), key=lambda i: (pool.traces[i].reasoning_length, i))
        chosen = sorted(by_length[: config.k])
    for i in chosen:
        if pool.traces[i].phase is Phase.THINKING:
            raise NotReadyError(f"selected trace {i} is still thinking")
    return chosen


def merge_start_round(pool: TracePool, config: StrategyConfig, selected: Sequence[int]) -> int:
    """Lockstep round at which the merged answer phase can begin.

    early_ready starts at the K-th completion; the other strategies wait
    for the whole pool. Pools built without a completion log fall back to
    reasoning lengths, which equal completion rounds by construction.
    """
    if config.kind is StrategyKind.EARLY_READY:
        kth = pool.completion_order[config.k - 1]
        return pool.completion_round[kth]
    return max(
        pool.completion_round.get(i, t.reasoning_length)
        for i, t in enumerate(pool.traces)
        if t.phase is not Phase.THINKING
    )


def trim_trace(trace: Trace, vocab: Vocabulary) -> Trace:
    """Apply suffix trimming to a closed trace's reasoning.

    The delimiter is detached, the repeated suffix collapsed, and the
    delimiter reattached. Unchanged traces come back as-is (phase intact).
    """
    d = vocab.delimiter
    body = trace.generated[: trace.delimiter_end - len(d)]
    trimmed = trim_repeated_suffix(body)
    if trimmed == body:
        return trace
    generated = trimmed + d
    return Trace.closed(trace.prompt, generated, len(generated), vocab, Phase.TRIMMED)
