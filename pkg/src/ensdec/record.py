"""Decode records: the JSONL result format emitted by every pipeline run.

Field order is fixed and floats are serialized via Python's shortest
round-trip repr, so identical runs produce byte-identical lines.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .core import (
    StrategyConfig,
    Vocabulary,
    strategy_from_json,
    strategy_to_json,
    vocabulary_from_json,
    vocabulary_to_json,
)

SCHEMA = "decode_record@1"


@dataclass
class TraceDiag:
    """Per-trace thinking diagnostics."""

    generated: tuple[int, ...]
    phase: str
    delimiter_end: Optional[int]
    forced: bool = False
    selected: bool = False
    completion_round: Optional[int] = None
    trimmed_from: Optional[int] = None

    def to_json(self) -> dict[str, Any]:
        return {
            "generated": list(self.generated),
            "phase": self.phase,
            "delimiter_end": self.delimiter_end,
            "forced": self.forced,
            "selected": self.selected,
            "completion_round": self.completion_round,
            "trimmed_from": self.trimmed_from,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "TraceDiag":
        return cls(
            generated=tuple(obj["generated"]),
            phase=obj["phase"],
            delimiter_end=obj["delimiter_end"],
            forced=obj["forced"],
            selected=obj["selected"],
            completion_round=obj["completion_round"],
            trimmed_from=obj["trimmed_from"],
        )


@dataclass
class DecodeRecord:
    """Everything needed to audit and replay one decoding session."""

    id: str
    config_hash: str
    seed: int
    pipeline: str
    merge_mode: str
    strategy: StrategyConfig
    vocab: Vocabulary
    prompt: tuple[int, ...]
    traces: list[TraceDiag] = field(default_factory=list)
    completion_order: list[int] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)
    merge_start_round: Optional[int] = None
    answer: tuple[int, ...] = ()
    answer_text: Optional[str] = None
    steps: list[dict[str, Any]] = field(default_factory=list)
    stop_reason: Optional[str] = None
    valid: bool = True
    error: Optional[str] = None

    def to_json(self) -> dict[str, Any]:
        return {
            "schema": SCHEMA,
            "id": self.id,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "pipeline": self.pipeline,
            "merge_mode": self.merge_mode,
            "strategy": strategy_to_json(self.strategy),
            "vocab": vocabulary_to_json(self.vocab),
            "prompt": list(self.prompt),
            "traces": [t.to_json() for t in self.traces],
            "completion_order": list(self.completion_order),
            "selected": list(self.selected),
            "merge_start_round": self.merge_start_round,
            "answer": list(self.answer),
            "answer_text": self.answer_text,
            "steps": self.steps,
            "stop_reason": self.stop_reason,
            "valid": self.valid,
            "error": self.error,
        }

    def to_jsonl(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "DecodeRecord":
        if obj.get("schema") != SCHEMA:
            raise ValueError(f"unsupported record schema {obj.get('schema')!r}, expected {SCHEMA!r}")
        return cls(
            id=obj["id"],
            config_hash=obj["config_hash"],
            seed=int(obj["seed"]),
            pipeline=obj["pipeline"],
            merge_mode=obj["merge_mode"],
            strategy=strategy_from_json(obj["strategy"]),
            vocab=vocabulary_from_json(obj["vocab"]),
            prompt=tuple(obj["prompt"]),
            traces=[TraceDiag.from_json(t) for t in obj["traces"]],
            completion_order=list(obj["completion_order"]),
            selected=list(obj["selected"]),
            merge_start_round=obj["merge_start_round"],
            answer=tuple(obj["answer"]),
            answer_text=obj["answer_text"],
            steps=list(obj["steps"]),
            stop_reason=obj["stop_reason"],
            valid=obj["valid"],
            error=obj["error"],
        )

    def rendered_answer(self) -> str:
        """Answer text, or the canonical token rendering for token-only
        backends (space-joined ids, trailing eos dropped)."""
        if self.answer_text is not None:
            return self.answer_text
        toks = list(self.answer)
        if toks and toks[-1] == self.vocab.eos_id:
            toks = toks[:-1]
        return " ".join(str(t) for t in toks)


def config_hash(parts: dict[str, Any]) -> str:
    """Stable 16-hex-digit hash of a semantic config mapping."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def read_records(path: str) -> list[DecodeRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(DecodeRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{line_no}: bad record: {exc}") from exc
    return out


def write_records(path: str, records: Iterable[DecodeRecord], append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_jsonl() + "\n")
