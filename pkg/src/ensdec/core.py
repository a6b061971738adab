"""Value types shared by every stage of the engine.

All types here are immutable after construction and safe to share across
workers. Constructors validate their invariants and raise ``ValueError``
with a descriptive message on violation. Each type has a canonical JSON
form (snake_case field names) used by the JSONL records and the wire
protocol; ``*_to_json`` / ``*_from_json`` round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Iterable, Optional, Sequence

MAX_VOCAB = 1 << 20
MAX_TOKEN_ID = (1 << 32) - 1


class Phase(str, Enum):
    THINKING = "thinking"
    FINISHED = "finished"
    TRIMMED = "trimmed"


class StrategyKind(str, Enum):
    DIRECT_MERGE = "direct_merge"
    EARLY_READY = "early_ready"
    SHORTEST_K = "shortest_k"


class MergeMode(str, Enum):
    LOGITS = "logits"
    PROBS = "probs"


def _check_token_ids(ids: Iterable[int], size: int, what: str) -> tuple[int, ...]:
    out = tuple(int(t) for t in ids)
    for t in out:
        if t < 0 or t > MAX_TOKEN_ID:
            raise ValueError(f"{what}: token id {t} outside unsigned 32-bit range")
        if t >= size:
            raise ValueError(f"{what}: token id {t} >= vocabulary size {size}")
    return out


@dataclass(frozen=True)
class Vocabulary:
    """Token-id space plus the reasoning/answer delimiter sequence."""

    size: int
    eos_id: int
    pad_id: int
    delimiter: tuple[int, ...]

    def __post_init__(self) -> None:
        if not 0 < self.size <= MAX_VOCAB:
            raise ValueError(f"vocabulary size must be in (0, {MAX_VOCAB}], got {self.size}")
        for name in ("eos_id", "pad_id"):
            v = getattr(self, name)
            if not 0 <= v < self.size:
                raise ValueError(f"{name} {v} outside vocabulary of size {self.size}")
        if self.pad_id == self.eos_id:
            raise ValueError("pad_id must differ from eos_id")
        object.__setattr__(self, "delimiter", tuple(int(t) for t in self.delimiter))
        if not self.delimiter:
            raise ValueError("delimiter must be a non-empty token sequence")
        _check_token_ids(self.delimiter, self.size, "delimiter")
        if self.pad_id in self.delimiter:
            raise ValueError("delimiter must not contain pad_id")


@dataclass(frozen=True)
class Trace:
    """One reasoning context: prompt, generated tokens, lifecycle phase.

    ``delimiter_end`` is the index one past the delimiter's final token in
    ``generated``; it doubles as the reasoning length used by shortest-K
    ordering. It is set exactly when the phase is finished/trimmed.
    """

    prompt: tuple[int, ...]
    generated: tuple[int, ...]
    phase: Phase = Phase.THINKING
    delimiter_end: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        object.__setattr__(self, "generated", tuple(int(t) for t in self.generated))
        closed = self.phase in (Phase.FINISHED, Phase.TRIMMED)
        if closed != (self.delimiter_end is not None):
            raise ValueError(
                f"phase {self.phase.value} inconsistent with delimiter_end={self.delimiter_end}"
            )
        if self.delimiter_end is not None:
            if not 0 < self.delimiter_end <= len(self.generated):
                raise ValueError(
                    f"delimiter_end {self.delimiter_end} outside generated "
                    f"length {len(self.generated)}"
                )

    @property
    def reasoning_length(self) -> int:
        if self.delimiter_end is None:
            raise ValueError("reasoning length undefined while thinking")
        return self.delimiter_end

    def context(self) -> tuple[int, ...]:
        """Logical context: prompt plus reasoning through the delimiter.

        Tokens after the delimiter are ignored; a thinking trace exposes
        everything generated so far.
        """
        if self.delimiter_end is None:
            return self.prompt + self.generated
        return self.prompt + self.generated[: self.delimiter_end]

    def check_delimiter(self, vocab: Vocabulary) -> "Trace":
        """Verify that ``generated[:delimiter_end]`` ends with the delimiter."""
        if self.delimiter_end is not None:
            d = vocab.delimiter
            head = self.generated[: self.delimiter_end]
            if len(head) < len(d) or head[-len(d):] != d:
                raise ValueError(
                    f"generated[:{self.delimiter_end}] does not end with the delimiter {d}"
                )
        return self

    @classmethod
    def closed(
        cls,
        prompt: Sequence[int],
        generated: Sequence[int],
        delimiter_end: int,
        vocab: Vocabulary,
        phase: Phase = Phase.FINISHED,
    ) -> "Trace":
        """Construct a finished/trimmed trace, validating the delimiter."""
        return cls(tuple(prompt), tuple(generated), phase, delimiter_end).check_delimiter(vocab)


@dataclass(frozen=True)
class EnsembleSession:
    """K closed traces plus the shared answer prefix being decoded."""

    traces: tuple[Trace, ...]
    answer: tuple[int, ...] = ()
    step: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "answer", tuple(int(t) for t in self.answer))
        if len(self.traces) < 1:
            raise ValueError("an ensemble session needs at least one trace")
        for i, t in enumerate(self.traces):
            if t.phase is Phase.THINKING:
                raise ValueError(f"trace {i} is still thinking; all traces must be past the delimiter")
        if self.step != len(self.answer):
            raise ValueError(f"step {self.step} != answer length {len(self.answer)}")

    @property
    def k(self) -> int:
        return len(self.traces)

    def with_token(self, token: int) -> "EnsembleSession":
        """Advance by one shared answer token."""
        return replace(self, answer=self.answer + (int(token),), step=self.step + 1)

    def contexts(self) -> list[tuple[int, ...]]:
        """Per-trace logical contexts extended by the shared answer."""
        return [t.context() + self.answer for t in self.traces]


@dataclass(frozen=True)
class SamplingPolicy:
    """Temperatures, truncation knobs and the seed that drives all draws."""

    temp_think: float = 0.6
    temp_answer: float = 0.6
    top_k: Optional[int] = None
    top_p: Optional[float] = 0.95
    repetition_penalty: float = 1.0
    seed: int = 0
    greedy: bool = False

    def __post_init__(self) -> None:
        if self.temp_think <= 0 or self.temp_answer <= 0:
            raise ValueError("temperatures must be positive")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be a positive integer")
        if self.top_p is not None and not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")
        if not 0 <= self.seed <= (1 << 64) - 1:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class StrategyConfig:
    """Which traces to ensemble and when to start the merged answer."""

    kind: StrategyKind
    k: int
    n: int
    trim_suffix: bool = False
    max_think_tokens: int = 256
    max_answer_tokens: int = 256

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("K must be a positive integer")
        if self.max_think_tokens < 1 or self.max_answer_tokens < 1:
            raise ValueError("token budgets must be positive")
        if self.kind is StrategyKind.DIRECT_MERGE:
            if self.n != self.k:
                raise ValueError("direct_merge requires N = K")
        else:
            # N = K degenerates to select-all; only N < K is incoherent
            if self.n < self.k:
                raise ValueError(f"{self.kind.value} requires a pool N >= K")


@dataclass(frozen=True)
class StopRule:
    """Answer-phase stop: eos or length budget, whichever triggers first."""

    eos_id: int
    max_answer_tokens: int

    def __post_init__(self) -> None:
        if self.max_answer_tokens < 1:
            raise ValueError("max_answer_tokens must be positive")

    def check(self, answer: Sequence[int]) -> Optional[str]:
        """Return the stop reason ('eos' / 'length') or None to continue."""
        if answer and answer[-1] == self.eos_id:
            return "eos"
        if len(answer) >= self.max_answer_tokens:
            return "length"
        return None


# --- canonical JSON -------------------------------------------------------


def vocabulary_to_json(v: Vocabulary) -> dict[str, Any]:
    return {
        "size": v.size,
        "eos_id": v.eos_id,
        "pad_id": v.pad_id,
        "delimiter": list(v.delimiter),
    }


def vocabulary_from_json(obj: dict[str, Any]) -> Vocabulary:
    return Vocabulary(
        size=int(obj["size"]),
        eos_id=int(obj["eos_id"]),
        pad_id=int(obj["pad_id"]),
        delimiter=tuple(obj["delimiter"]),
    )


def trace_to_json(t: Trace) -> dict[str, Any]:
    return {
        "prompt": list(t.prompt),
        "generated": list(t.generated),
        "phase": t.phase.value,
        "delimiter_end": t.delimiter_end,
    }


def trace_from_json(obj: dict[str, Any], vocab: Optional[Vocabulary] = None) -> Trace:
    t = Trace(
        prompt=tuple(obj["prompt"]),
        generated=tuple(obj["generated"]),
        phase=Phase(obj["phase"]),
        delimiter_end=obj["delimiter_end"],
    )
    if vocab is not None:
        t.check_delimiter(vocab)
    return t


def session_to_json(s: EnsembleSession) -> dict[str, Any]:
    return {
        "traces": [trace_to_json(t) for t in s.traces],
        "answer": list(s.answer),
        "step": s.step,
    }


def session_from_json(obj: dict[str, Any], vocab: Optional[Vocabulary] = None) -> EnsembleSession:
    return EnsembleSession(
        traces=tuple(trace_from_json(t, vocab) for t in obj["traces"]),
        answer=tuple(obj["answer"]),
        step=int(obj["step"]),
    )


def policy_to_json(p: SamplingPolicy) -> dict[str, Any]:
    return {
        "temp_think": p.temp_think,
        "temp_answer": p.temp_answer,
        "top_k": p.top_k,
        "top_p": p.top_p,
        "repetition_penalty": p.repetition_penalty,
        "seed": p.seed,
        "greedy": p.greedy,
    }


def policy_from_json(obj: dict[str, Any]) -> SamplingPolicy:
    return SamplingPolicy(
        temp_think=float(obj["temp_think"]),
        temp_answer=float(obj["temp_answer"]),
        top_k=None if obj.get("top_k") is None else int(obj["top_k"]),
        top_p=None if obj.get("top_p") is None else float(obj["top_p"]),
        repetition_penalty=float(obj["repetition_penalty"]),
        seed=int(obj["seed"]),
        greedy=bool(obj["greedy"]),
    )


def strategy_to_json(s: StrategyConfig) -> dict[str, Any]:
    return {
        "kind": s.kind.value,
        "k": s.k,
        "n": s.n,
        "trim_suffix": s.trim_suffix,
        "max_think_tokens": s.max_think_tokens,
        "max_answer_tokens": s.max_answer_tokens,
    }


def strategy_from_json(obj: dict[str, Any]) -> StrategyConfig:
    return StrategyConfig(
        kind=StrategyKind(obj["kind"]),
        k=int(obj["k"]),
        n=int(obj["n"]),
        trim_suffix=bool(obj["trim_suffix"]),
        max_think_tokens=int(obj["max_think_tokens"]),
        max_answer_tokens=int(obj["max_answer_tokens"]),
    )


def stop_rule_to_json(r: StopRule) -> dict[str, Any]:
    return {"eos_id": r.eos_id, "max_answer_tokens": r.max_answer_tokens}


def stop_rule_from_json(obj: dict[str, Any]) -> StopRule:
    return StopRule(eos_id=int(obj["eos_id"]), max_answer_tokens=int(obj["max_answer_tokens"]))
