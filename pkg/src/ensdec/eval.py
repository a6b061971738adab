"""Closed-ended scoring: answer extraction, majority voting, pass@k.

Correctness is exact string match on canonicalized answers against a gold
file; judging free-form outputs with another model is out of scope.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Optional, Sequence

from .record import DecodeRecord

_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")
_NUMERIC_RE = re.compile(r"^[+-]?\d+(\.\d+)?$")
_ANSWER_LABEL_RE = re.compile(r"^\s*answer\s*[:：]\s*", re.IGNORECASE)


def normalize_answer(text: str) -> str:
    """Canonical answer form: trimmed, lowercased, whitespace collapsed,
    numeric strings stripped of leading zeros and an all-zero fraction.

    Idempotent: normalizing a normalized answer is a no-op.
    """
    out = " ".join(text.strip().lower().split())
    if _NUMERIC_RE.match(out):
        sign = ""
        body = out
        if body and body[0] in "+-":
            sign, body = body[0], body[1:]
        if "." in body:
            whole, frac = body.split(".", 1)
        else:
            whole, frac = body, ""
        whole = whole.lstrip("0") or "0"
        if frac.strip("0") == "":
            frac = ""
        out = sign + whole + ("." + frac if frac else "")
        if out in ("-0", "+0"):
            out = "0"
    return out


@dataclass(frozen=True)
class ExtractionRule:
    """How to pull the final answer out of a generated text."""

    kind: str  # "boxed" | "final_line" | "regex"
    regex: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in ("boxed", "final_line", "regex"):
            raise ValueError(f"unknown extraction rule {self.kind!r}")
        if self.kind == "regex":
            if not self.regex:
                raise ValueError("regex extraction rule needs a pattern")
            try:
                re.compile(self.regex)
            except re.error as exc:
                raise ValueError(f"invalid extraction regex: {exc}") from exc


def extract_answer(answer_text: str, rule: ExtractionRule) -> Optional[str]:
    """First match under the rule, normalized; None when nothing matches."""
    if rule.kind == "boxed":
        m = _BOXED_RE.search(answer_text)
        return normalize_answer(m.group(1)) if m else None
    if rule.kind == "regex":
        m = re.search(rule.regex or "", answer_text)
        if not m:
            return None
        return normalize_answer(m.group(1) if m.groups() else m.group(0))
    lines = [ln for ln in answer_text.splitlines() if ln.strip()]
    if not lines:
        return None
    return normalize_answer(_ANSWER_LABEL_RE.sub("", lines[-1]))


def majority_vote(answers: Sequence[Optional[str]]) -> Optional[str]:
    """Most frequent non-None answer; ties go to the earliest first seen."""
    present = [a for a in answers if a is not None]
    if not present:
        return None
    counts = Counter(present)
    best = max(counts.values())
    for a in present:  # first-occurrence order
        if counts[a] == best:
            return a
    raise AssertionError("unreachable")


def pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that a size-k sample from n graded attempts (c correct)
    contains at least one correct one: 1 - C(n-c, k)/C(n, k)."""
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    frac = Fraction(math.comb(n - c, k), math.comb(n, k))
    return float(1 - frac)


def summarize(records: Iterable[DecodeRecord]) -> dict[str, Any]:
    """Grouped counts and length statistics over decode records.

    Groups are keyed by (strategy, K, N, merge_mode, pipeline) and listed
    in sorted key order. Mixed schema versions are rejected upstream by
    the record parser.
    """
    groups: dict[tuple, dict[str, Any]] = {}
    total = 0
    for rec in records:
        total += 1
        key = (rec.strategy.kind.value, rec.strategy.k, rec.strategy.n, rec.merge_mode, rec.pipeline)
        g = groups.setdefault(
            key,
            {
                "strategy": key[0],
                "k": key[1],
                "n": key[2],
                "merge_mode": key[3],
                "pipeline": key[4],
                "records": 0,
                "valid": 0,
                "invalid": 0,
                "stop_eos": 0,
                "stop_length": 0,
                "forced_traces": 0,
                "_answer_tokens": [],
                "_reasoning_tokens": [],
            },
        )
        g["records"] += 1
        g["valid" if rec.valid else "invalid"] += 1
        if rec.stop_reason == "eos":
            g["stop_eos"] += 1
        elif rec.stop_reason == "length":
            g["stop_length"] += 1
        g["forced_traces"] += sum(1 for t in rec.traces if t.forced)
        g["_answer_tokens"].append(len(rec.answer))
        for t in rec.traces:
            if t.selected and t.delimiter_end is not None:
                g["_reasoning_tokens"].append(t.delimiter_end)

    def mean(xs: Sequence[int]) -> Optional[float]:
        return round(sum(xs) / len(xs), 4) if xs else None

    out_groups = []
    for key in sorted(groups):
        g = groups[key]
        g["mean_answer_tokens"] = mean(g.pop("_answer_tokens"))
        g["mean_selected_reasoning_tokens"] = mean(g.pop("_reasoning_tokens"))
        out_groups.append(g)
    return {"schema": "metrics@1", "total_records": total, "groups": out_groups}
