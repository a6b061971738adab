"""End-to-end decode orchestration in two shapes.

``run_two_stage`` maps then reduces: sample N reasoning traces to the
delimiter, select K, left-pad their contexts into one aligned batch, then
decode a single shared answer by averaging the K per-step logit vectors.
``run_one_step`` keeps the K streams in one batched lockstep loop from the
start: finished streams emit masked pad tokens while the longest is still
thinking, and every post-gate step writes one shared token into all rows.
Both shapes produce identical answers for the same seed.

All randomness flows from the session seed: trace k thinks on the
sub-stream ``seed ^ splitmix64(k)`` and the answer phase draws from the
main stream, so the thinking order (parallel or not) cannot perturb the
answer transcript.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .backend import Backend, BackendError
from .core import (
    EnsembleSession,
    MergeMode,
    SamplingPolicy,
    StopRule,
    StrategyConfig,
    StrategyKind,
    Trace,
    Vocabulary,
    policy_to_json,
    strategy_to_json,
    vocabulary_to_json,
)
from .logits import merge_logits, merge_probs
from .record import DecodeRecord, TraceDiag, config_hash
from .rng import Rng
from .sampling import answer_distribution, select_token
from .scheduler import (
    TracePool,
    ends_with_delimiter,
    merge_start_round,
    select_traces,
    trim_trace,
)


@dataclass(frozen=True)
class PaddedBatch:
    """K equal-length rows with an attention mask marking real tokens.

    Masked positions must hold ``pad_id``; stripping them reproduces each
    row's logical context. Rows consisting solely of padding are rejected.
    """

    rows: tuple[tuple[int, ...], ...]
    mask: tuple[tuple[bool, ...], ...]
    pad_id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", tuple(tuple(int(t) for t in r) for r in self.rows))
        object.__setattr__(self, "mask", tuple(tuple(bool(b) for b in r) for r in self.mask))
        if len(self.rows) == 0:
            raise ValueError("padded batch needs at least one row")
        if len(self.mask) != len(self.rows):
            raise ValueError("mask and rows row counts differ")
        width = len(self.rows[0])
        for k, (row, m) in enumerate(zip(self.rows, self.mask)):
            if len(row) != width or len(m) != width:
                raise ValueError(f"row {k} length differs from batch width {width}")
            if width > 0 and not any(m):
                raise ValueError(f"row {k} is all padding")
            for j, attend in enumerate(m):
                if not attend and row[j] != self.pad_id:
                    raise ValueError(f"row {k} position {j} is masked but holds {row[j]}, not pad")

    def stripped(self, k: int) -> tuple[int, ...]:
        """Logical context of row k (masked positions dropped)."""
        return tuple(t for t, keep in zip(self.rows[k], self.mask[k]) if keep)


def align_contexts(traces: Sequence[Trace], vocab: Vocabulary) -> PaddedBatch:
    """Left-pad the prompt+reasoning contexts to a common length."""
    if len(traces) == 0:
        raise ValueError("cannot align an empty trace list")
    contexts = [t.context() for t in traces]
    width = max(len(c) for c in contexts)
    rows, mask = [], []
    for c in contexts:
        pads = width - len(c)
        rows.append((vocab.pad_id,) * pads + c)
        mask.append((False,) * pads + (True,) * len(c))
    return PaddedBatch(tuple(rows), tuple(mask), vocab.pad_id)


def _check_backend_vocab(backend: Backend, vocab: Vocabulary) -> None:
    d = backend.descriptor
    if (d.vocab_size, d.eos_id, d.pad_id) != (vocab.size, vocab.eos_id, vocab.pad_id):
        raise ValueError(
            f"backend vocabulary (size={d.vocab_size}, eos={d.eos_id}, pad={d.pad_id}) "
            f"inconsistent with session vocabulary (size={vocab.size}, eos={vocab.eos_id}, "
            f"pad={vocab.pad_id})"
        )


def _check_budgets(strategy: StrategyConfig, vocab: Vocabulary) -> None:
    if strategy.max_think_tokens < len(vocab.delimiter):
        raise ValueError(
            f"max_think_tokens {strategy.max_think_tokens} cannot fit the "
            f"{len(vocab.delimiter)}-token delimiter"
        )


def _force_close(generated: list[int], vocab: Vocabulary, max_think: int) -> list[int]:
    # Guarantees delimiter_end == max_think exactly.
    cut = max_think - len(vocab.delimiter)
    return generated[:cut] + list(vocab.delimiter)


def _think_one(
    prompt: Sequence[int],
    vocab: Vocabulary,
    strategy: StrategyConfig,
    policy: SamplingPolicy,
    backend: Backend,
    rng: Rng,
) -> tuple[list[int], int, bool]:
    """Decode one reasoning trace; returns (generated, round, forced)."""
    prompt = list(prompt)
    generated: list[int] = []
    while True:
        if ends_with_delimiter(generated, vocab):
            return generated, len(generated), False
        if len(generated) >= strategy.max_think_tokens:
            closed = _force_close(generated, vocab, strategy.max_think_tokens)
            return closed, strategy.max_think_tokens, True
        logits = backend.next_logits([prompt + generated])[0]
        dist = answer_distribution(logits, generated, policy, policy.temp_think)
        generated.append(select_token(dist, policy, rng))


def generate_thinking(
    prompt: Sequence[int],
    config: StrategyConfig,
    policy: SamplingPolicy,
    backend: Backend,
    rng: Rng,
    vocab: Vocabulary,
) -> TracePool:
    """Sample the N-trace reasoning pool.

    Traces decode independently on their sub-seeded streams, which is
    token-for-token identical to a lockstep schedule, so the completion log
    is reconstructed as (rounds, index): a trace closing with g generated
    tokens completed at round g. Under early_ready, traces still thinking
    when the K-th completion lands are abandoned mid-thought.
    """
    _check_backend_vocab(backend, vocab)
    _check_budgets(config, vocab)
    prompt = tuple(int(t) for t in prompt)
    results = [
        _think_one(prompt, vocab, config, policy, backend, rng.spawn(k))
        for k in range(config.n)
    ]
    events = sorted((rounds, k) for k, (_, rounds, _) in enumerate(results))

    cutoff = math.inf
    if config.kind is StrategyKind.EARLY_READY:
        cutoff = events[config.k - 1][0]

    pool = TracePool(traces=[])
    for k, (generated, rounds, forced) in enumerate(results):
        if rounds <= cutoff:
            pool.traces.append(Trace.closed(prompt, generated, len(generated), vocab))
            if forced:
                pool.forced.add(k)
        else:
            # Abandoned once the K-th trace completed; keep the partial text.
            pool.traces.append(Trace(prompt, tuple(generated[: int(cutoff)])))
    for rounds, k in events:
        if rounds <= cutoff:
            pool.record_completion(k, rounds)
    return pool


def _merge_and_choose(
    vectors: list[np.ndarray],
    session: EnsembleSession,
    policy: SamplingPolicy,
    rng: Rng,
    merge_mode: MergeMode,
) -> tuple[int, float]:
    if merge_mode is MergeMode.LOGITS:
        merged = merge_logits(vectors)
        dist = answer_distribution(merged, session.answer, policy, policy.temp_answer)
    else:
        probs = merge_probs(vectors, policy.temp_answer)
        with np.errstate(divide="ignore"):
            merged = np.log(probs)
        # Already a tempered distribution; softmax(log p, T=1) recovers it.
        dist = answer_distribution(merged, session.answer, policy, 1.0)
    token = select_token(dist, policy, rng)
    return token, float(dist[token])


def _new_record(
    prompt: Sequence[int],
    vocab: Vocabulary,
    strategy: StrategyConfig,
    policy: SamplingPolicy,
    backend: Backend,
    merge_mode: MergeMode,
    pipeline: str,
    prompt_id: str,
    run_hash: Optional[str],
) -> DecodeRecord:
    if run_hash is None:
        run_hash = config_hash(
            {
                "pipeline": pipeline,
                "merge_mode": merge_mode.value,
                "strategy": strategy_to_json(strategy),
                "sampling": policy_to_json(policy),
                "vocab": vocabulary_to_json(vocab),
                "model": backend.descriptor.model,
            }
        )
    return DecodeRecord(
        id=prompt_id,
        config_hash=run_hash,
        seed=policy.seed,
        pipeline=pipeline,
        merge_mode=merge_mode.value,
        strategy=strategy,
        vocab=vocab,
        prompt=tuple(int(t) for t in prompt),
    )


def _pool_diags(pool: TracePool, selected: Sequence[int]) -> list[TraceDiag]:
    diags = []
    chosen = set(selected)
    for i, t in enumerate(pool.traces):
        diags.append(
            TraceDiag(
                generated=t.generated,
                phase=t.phase.value,
                delimiter_end=t.delimiter_end,
                forced=i in pool.forced,
                selected=i in chosen,
                completion_round=pool.completion_round.get(i),
            )
        )
    return diags


def decode_answer(
    pool: TracePool,
    config: StrategyConfig,
    policy: SamplingPolicy,
    backend: Backend,
    rng: Rng,
    vocab: Vocabulary,
    merge_mode: MergeMode = MergeMode.LOGITS,
    prompt_id: str = "",
    run_hash: Optional[str] = None,
    pipeline: str = "two_stage",
) -> tuple[tuple[int, ...], DecodeRecord]:
    """Select, align and decode the shared answer over a finished pool.

    A backend failure mid-decode aborts the session: the partial record is
    returned flagged invalid instead of raising.
    """
    prompt = pool.traces[0].prompt if pool.traces else ()
    record = _new_record(
        prompt, vocab, config, policy, backend, merge_mode, pipeline, prompt_id, run_hash
    )
    selected = select_traces(pool, config)

    chosen_traces: list[Trace] = []
    trimmed_from: dict[int, int] = {}
    for i in selected:
        t = pool.traces[i]
        if config.trim_suffix:
            before = t.delimiter_end
            t = trim_trace(t, vocab)
            if t.delimiter_end != before:
                trimmed_from[i] = before  # type: ignore[assignment]
        chosen_traces.append(t)

    record.traces = _pool_diags(pool, selected)
    for i, t in zip(selected, chosen_traces):
        if i in trimmed_from:
            diag = record.traces[i]
            diag.generated = t.generated
            diag.phase = t.phase.value
            diag.delimiter_end = t.delimiter_end
            diag.trimmed_from = trimmed_from[i]
    record.completion_order = list(pool.completion_order)
    record.selected = list(selected)
    record.merge_start_round = merge_start_round(pool, config, selected)

    batch = align_contexts(chosen_traces, vocab)
    rows = [list(r) for r in batch.rows]
    mask = [list(m) for m in batch.mask]
    session = EnsembleSession(tuple(chosen_traces))
    stop = StopRule(vocab.eos_id, config.max_answer_tokens)

    def fetch(current: EnsembleSession) -> list[np.ndarray]:
        if backend.descriptor.supports_mask:
            live = PaddedBatch(
                tuple(tuple(r) for r in rows), tuple(tuple(m) for m in mask), vocab.pad_id
            )
            return backend.next_logits_masked(live)
        return backend.next_logits(current.contexts())

    def on_token(tok: int) -> None:
        for r, m in zip(rows, mask):
            r.append(tok)
            m.append(True)

    session, reason = _answer_loop(
        fetch, session, policy, rng, stop, merge_mode, record, on_token
    )
    record.answer = session.answer
    record.stop_reason = reason
    return session.answer, record


def _answer_loop(
    fetch: Callable[[EnsembleSession], list[np.ndarray]],
    session: EnsembleSession,
    policy: SamplingPolicy,
    rng: Rng,
    stop: StopRule,
    merge_mode: MergeMode,
    record: DecodeRecord,
    on_token: Callable[[int], Any],
) -> tuple[EnsembleSession, Optional[str]]:
    while True:
        try:
            vectors = fetch(session)
        except BackendError as exc:
            record.valid = False
            record.error = f"answer step {session.step}: {exc}"
            return session, None
        token, prob = _merge_and_choose(vectors, session, policy, rng, merge_mode)
        record.steps.append({"token": token, "prob": prob})
        session = session.with_token(token)
        on_token(token)
        reason = stop.check(session.answer)
        if reason is not None:
            return session, reason


def run_two_stage(
    prompt: Sequence[int],
    config: StrategyConfig,
    policy: SamplingPolicy,
    backend: Backend,
    rng: Optional[Rng] = None,
    *,
    vocab: Vocabulary,
    merge_mode: MergeMode = MergeMode.LOGITS,
    prompt_id: str = "",
    run_hash: Optional[str] = None,
) -> DecodeRecord:
    """Map/reduce shape: think in parallel, then merge over a padded batch."""
    rng = rng if rng is not None else Rng(policy.seed)
    try:
        pool = generate_thinking(prompt, config, policy, backend, rng, vocab)
    except BackendError as exc:
        record = _new_record(
            prompt, vocab, config, policy, backend, merge_mode, "two_stage", prompt_id, run_hash
        )
        record.valid = False
        record.error = f"thinking: {exc}"
        return record
    _, record = decode_answer(
        pool, config, policy, backend, rng, vocab, merge_mode, prompt_id, run_hash, "two_stage"
    )
    return record


def run_one_step(
    prompt: Sequence[int],
    config: StrategyConfig,
    policy: SamplingPolicy,
    backend: Backend,
    rng: Optional[Rng] = None,
    *,
    vocab: Vocabulary,
    merge_mode: MergeMode = MergeMode.LOGITS,
    prompt_id: str = "",
    run_hash: Optional[str] = None,
) -> DecodeRecord:
    """Single batched loop: masked pads while thinking, shared tokens after.

    Supports direct_merge only; other strategies route through the
    two-stage shape. The backend must accept masked batches.
    """
    if config.kind is not StrategyKind.DIRECT_MERGE:
        raise ValueError(f"one_step supports direct_merge only, not {config.kind.value}")
    if not backend.descriptor.supports_mask:
        raise ValueError("one_step requires a backend with mask support")
    _check_backend_vocab(backend, vocab)
    _check_budgets(config, vocab)

    rng = rng if rng is not None else Rng(policy.seed)
    prompt = tuple(int(t) for t in prompt)
    record = _new_record(
        prompt, vocab, config, policy, backend, merge_mode, "one_step", prompt_id, run_hash
    )
    k_total = config.k
    rngs = [rng.spawn(k) for k in range(k_total)]
    gens: list[list[int]] = [[] for _ in range(k_total)]
    rows: list[list[int]] = [list(prompt) for _ in range(k_total)]
    mask: list[list[bool]] = [[True] * len(prompt) for _ in range(k_total)]
    pool = TracePool(traces=[Trace(prompt, ()) for _ in range(k_total)])
    done = [False] * k_total
    rounds = 0

    def live_batch() -> PaddedBatch:
        return PaddedBatch(
            tuple(tuple(r) for r in rows), tuple(tuple(m) for m in mask), vocab.pad_id
        )

    while not all(done):
        rounds += 1
        try:
            logit_rows = backend.next_logits_masked(live_batch())
        except BackendError as exc:
            record.valid = False
            record.error = f"thinking round {rounds}: {exc}"
            for k in range(k_total):
                if not done[k]:
                    pool.traces[k] = Trace(prompt, tuple(gens[k]))
            record.traces = _pool_diags(pool, [])
            record.completion_order = list(pool.completion_order)
            return record
        finishers = []
        for k in range(k_total):
            if done[k]:
                rows[k].append(vocab.pad_id)
                mask[k].append(False)
                continue
            dist = answer_distribution(logit_rows[k], gens[k], policy, policy.temp_think)
            tok = select_token(dist, policy, rngs[k])
            gens[k].append(tok)
            rows[k].append(tok)
            mask[k].append(True)
            if ends_with_delimiter(gens[k], vocab):
                done[k] = True
                finishers.append(k)
            elif len(gens[k]) >= config.max_think_tokens:
                gens[k] = _force_close(gens[k], vocab, config.max_think_tokens)
                rows[k][len(prompt):] = gens[k]
                done[k] = True
                pool.forced.add(k)
                finishers.append(k)
        for k in finishers:
            pool.traces[k] = Trace.closed(prompt, gens[k], len(gens[k]), vocab)
            pool.record_completion(k, rounds)

    selected = select_traces(pool, config)
    record.traces = _pool_diags(pool, selected)
    record.completion_order = list(pool.completion_order)
    record.selected = list(selected)
    record.merge_start_round = rounds

    session = EnsembleSession(tuple(pool.traces))
    stop = StopRule(vocab.eos_id, config.max_answer_tokens)

    def on_token(tok: int) -> None:
        for k in range(k_total):
            rows[k].append(tok)
            mask[k].append(True)

    session, reason = _answer_loop(
        lambda _s: backend.next_logits_masked(live_batch()),
        session, policy, rng, stop, merge_mode, record, on_token,
    )
    record.answer = session.answer
    record.stop_reason = reason
    return record
