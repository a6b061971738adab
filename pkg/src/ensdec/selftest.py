"""Built-in conformance suites, runnable from the CLI without pytest.

Each suite checks an engine code path against an independent brute-force
oracle implemented here with plain Python arithmetic, so a regression in
the optimized path cannot hide in a shared helper.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import logits as logits_mod
from .backend import ToyHashBackend
from .core import MergeMode, SamplingPolicy, StrategyConfig, StrategyKind, Vocabulary
from .eval import pass_at_k
from .pipeline import PaddedBatch, run_one_step, run_two_stage
from .sampling import apply_top_k, apply_top_p


@dataclass
class SuiteResult:
    name: str
    ok: bool
    cases: int
    detail: str
    seconds: float


MergeFn = Callable[[Sequence[np.ndarray]], np.ndarray]


def _softmax_oracle(values: Sequence[float], temperature: float = 1.0) -> list[float]:
    scaled = [v / temperature for v in values]
    hi = max(scaled)
    ex = [math.exp(v - hi) for v in scaled]
    s = sum(ex)
    return [e / s for e in ex]


def _argmax_oracle(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def suite_merge_invariance(sets: int = 1000, merge_fn: Optional[MergeFn] = None) -> SuiteResult:
    """Permutation invariance, the c/K shift law, prob-vector validity and
    the logit-vs-prob divergence witness."""
    merge = merge_fn or logits_mod.merge_logits
    rng = np.random.default_rng(20240901)
    t0 = time.monotonic()
    failures = []
    for case in range(sets):
        k = int(rng.integers(1, 9))
        size = int(rng.integers(2, 65))
        vecs = [rng.normal(0, 4, size).astype(np.float32) for _ in range(k)]
        base = merge(vecs)
        perm = list(rng.permutation(k))
        permuted = merge([vecs[i] for i in perm])
        if np.max(np.abs(base.astype(np.float64) - permuted.astype(np.float64))) > 1e-6:
            failures.append(f"case {case}: permutation moved the mean")
            break
        if np.max(np.abs(logits_mod.softmax(base) - logits_mod.softmax(permuted))) > 1e-6:
            failures.append(f"case {case}: permutation moved the softmax")
            break
        # Lattice values (multiples of 2^-10) keep the float32 shift exact,
        # so the c/K law is tested without input-quantization noise.
        lattice = [
            (rng.integers(-16384, 16385, size) / 1024.0).astype(np.float32) for _ in range(k)
        ]
        c = float(rng.integers(-8192, 8193)) / 1024.0
        lat_base = merge(lattice)
        shifted_inputs = [v.copy() for v in lattice]
        shifted_inputs[0] = (shifted_inputs[0].astype(np.float64) + c).astype(np.float32)
        shifted = merge(shifted_inputs)
        expect = lat_base.astype(np.float64) + c / k
        if np.max(np.abs(shifted.astype(np.float64) - expect)) > 4e-6:
            failures.append(f"case {case}: shift by {c} did not move the mean by c/K")
            break
        if np.max(np.abs(logits_mod.softmax(shifted) - logits_mod.softmax(lat_base))) > 1e-6:
            failures.append(f"case {case}: shifted softmax diverged")
            break
        probs = logits_mod.merge_probs(vecs, temperature=1.0)
        if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-6:
            failures.append(f"case {case}: merge_probs output is not a distribution")
            break

    witness = [np.array(v, dtype=np.float32) for v in ([20, 0], [0, 6], [0, 6])]
    lm = merge(witness)
    pm = logits_mod.merge_probs(witness, temperature=1.0)
    oracle_pm = [
        sum(col) / 3.0
        for col in zip(*(_softmax_oracle(list(map(float, v))) for v in witness))
    ]
    if _argmax_oracle(list(map(float, lm))) != 0 or _argmax_oracle(list(map(float, pm))) != 1:
        failures.append("divergence witness lost: merge_logits/merge_probs argmaxes wrong")
    if _argmax_oracle(oracle_pm) != 1 or max(abs(a - b) for a, b in zip(oracle_pm, pm)) > 1e-9:
        failures.append("merge_probs disagrees with the brute-force softmax oracle")

    return SuiteResult(
        "merge_invariance", not failures, sets, failures[0] if failures else "ok",
        time.monotonic() - t0,
    )


def _random_policy(rng: np.random.Generator, size: int) -> SamplingPolicy:
    return SamplingPolicy(
        temp_think=float(rng.uniform(0.3, 1.5)),
        temp_answer=float(rng.uniform(0.3, 1.5)),
        top_k=int(rng.integers(1, size + 1)) if rng.random() < 0.4 else None,
        top_p=float(rng.uniform(0.3, 1.0)) if rng.random() < 0.4 else None,
        repetition_penalty=float(rng.uniform(1.0, 1.5)) if rng.random() < 0.4 else 1.0,
        seed=int(rng.integers(0, 2**63)),
        greedy=bool(rng.random() < 0.3),
    )


def random_toy_setup(rng: np.random.Generator, max_k: int = 4):
    """One random toy-hash decoding scenario (shared by several suites)."""
    size = int(rng.integers(8, 65))
    pad_id = 0
    delim_len = int(rng.integers(1, 3))
    ids = rng.choice(np.arange(2, size), size=delim_len + 1, replace=False)
    delimiter = tuple(int(t) for t in ids[:delim_len])
    eos_id = int(ids[delim_len])
    vocab = Vocabulary(size=size, eos_id=eos_id, pad_id=pad_id, delimiter=delimiter)
    k = int(rng.integers(1, max_k + 1))
    strategy = StrategyConfig(
        kind=StrategyKind.DIRECT_MERGE,
        k=k,
        n=k,
        max_think_tokens=int(rng.integers(delim_len, 17)) + delim_len,
        max_answer_tokens=int(rng.integers(3, 11)),
    )
    policy = _random_policy(rng, size)
    prompt = [int(t) for t in rng.integers(0, size, int(rng.integers(0, 7)))]
    backend = ToyHashBackend(
        vocab_size=size,
        seed=int(rng.integers(0, 2**63)),
        m=int(rng.integers(1, 9)),
        force_after=len(prompt) + int(rng.integers(2, 10)),
        delimiter_first_id=delimiter[0],
        eos_id=eos_id,
        pad_id=pad_id,
    )
    merge_mode = MergeMode.PROBS if rng.random() < 0.3 else MergeMode.LOGITS
    return prompt, vocab, strategy, policy, backend, merge_mode


def suite_pipeline_equivalence(cases: int = 100) -> SuiteResult:
    """run_two_stage and run_one_step must emit identical answers."""
    rng = np.random.default_rng(20240902)
    t0 = time.monotonic()
    failures = []
    for case in range(cases):
        prompt, vocab, strategy, policy, backend, merge_mode = random_toy_setup(rng)
        two = run_two_stage(
            prompt, strategy, policy, backend, vocab=vocab, merge_mode=merge_mode
        )
        one = run_one_step(
            prompt, strategy, policy, backend, vocab=vocab, merge_mode=merge_mode
        )
        if two.answer != one.answer:
            failures.append(
                f"case {case}: two_stage {list(two.answer)} != one_step {list(one.answer)}"
            )
            break
        if two.merge_start_round != one.merge_start_round:
            failures.append(f"case {case}: merge start rounds differ")
            break
    return SuiteResult(
        "pipeline_equivalence", not failures, cases, failures[0] if failures else "ok",
        time.monotonic() - t0,
    )


def _top_k_oracle(values: list[float], k: int) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    keep = set(order[:k])
    return [v if i in keep else float("-inf") for i, v in enumerate(values)]


def _top_p_oracle(probs: list[float], p: float) -> list[float]:
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    kept: set[int] = set()
    mass = 0.0
    for i in order:
        kept.add(i)
        mass += probs[i]
        if mass >= p:
            break
    total = sum(probs[i] for i in kept)
    return [probs[i] / total if i in kept else 0.0 for i in range(len(probs))]


def suite_sampler_oracles(cases: int = 10_000) -> SuiteResult:
    """top-k and top-p against exhaustive oracles on vocab <= 16."""
    rng = np.random.default_rng(20240903)
    t0 = time.monotonic()
    failures = []
    for case in range(cases):
        size = int(rng.integers(1, 17))
        vec = rng.normal(0, 3, size)
        if rng.random() < 0.2:  # force ties
            vec = np.round(vec)
        k = int(rng.integers(1, size + 1))
        got = apply_top_k(vec, k)
        want = _top_k_oracle([float(v) for v in vec], k)
        for i in range(size):
            if math.isinf(want[i]) != math.isinf(float(got[i])):
                failures.append(f"case {case}: top-k kept the wrong support at id {i}")
                break
            if not math.isinf(want[i]) and abs(want[i] - float(got[i])) > 1e-6:
                failures.append(f"case {case}: top-k changed a kept value at id {i}")
                break
        if failures:
            break
        probs = _softmax_oracle([float(v) for v in vec])
        p = float(rng.uniform(0.05, 1.0))
        got_p = apply_top_p(np.array(probs, dtype=np.float64), p)
        want_p = _top_p_oracle(probs, p)
        if max(abs(a - float(b)) for a, b in zip(want_p, got_p)) > 1e-6:
            failures.append(f"case {case}: top-p filter disagrees with the oracle")
            break
        if abs(float(got_p.sum()) - 1.0) > 1e-6:
            failures.append(f"case {case}: top-p output does not sum to 1")
            break
    return SuiteResult(
        "sampler_oracles", not failures, cases, failures[0] if failures else "ok",
        time.monotonic() - t0,
    )


def _pass_at_k_enumeration(n: int, c: int, k: int) -> float:
    hits = 0
    total = 0
    for combo in itertools.combinations(range(n), k):
        total += 1
        if any(i < c for i in combo):  # first c samples are the correct ones
            hits += 1
    return hits / total


def suite_estimator_enumeration(n_max: int = 12) -> SuiteResult:
    t0 = time.monotonic()
    failures = []
    cases = 0
    for n in range(1, n_max + 1):
        for c in range(0, n + 1):
            for k in range(1, n + 1):
                cases += 1
                got = pass_at_k(n, c, k)
                want = _pass_at_k_enumeration(n, c, k)
                if abs(got - want) > 1e-12:
                    failures.append(f"pass@k({n},{c},{k}) = {got}, enumeration says {want}")
                    break
    return SuiteResult(
        "estimator_enumeration", not failures, cases, failures[0] if failures else "ok",
        time.monotonic() - t0,
    )


def suite_mask_conformance(cases: int = 200) -> SuiteResult:
    """next_logits_masked == next_logits on pad-stripped contexts, exactly."""
    rng = np.random.default_rng(20240904)
    t0 = time.monotonic()
    failures = []
    for case in range(cases):
        size = int(rng.integers(4, 65))
        pad_id = 0
        backend = ToyHashBackend(vocab_size=size, seed=int(rng.integers(0, 2**63)), pad_id=pad_id)
        k = int(rng.integers(1, 5))
        width = int(rng.integers(2, 13))
        rows, mask, stripped = [], [], []
        for _ in range(k):
            pads = int(rng.integers(0, min(9, width)))
            positions = set(rng.choice(width, size=pads, replace=False).tolist())
            row, m, logical = [], [], []
            for j in range(width):
                if j in positions:
                    row.append(pad_id)
                    m.append(False)
                else:
                    t = int(rng.integers(0, size))
                    row.append(t)
                    m.append(True)
                    logical.append(t)
            rows.append(tuple(row))
            mask.append(tuple(m))
            stripped.append(logical)
        batch = PaddedBatch(tuple(rows), tuple(mask), pad_id)
        masked = backend.next_logits_masked(batch)
        plain = backend.next_logits(stripped)
        for a, b in zip(masked, plain):
            if not np.array_equal(a, b):
                failures.append(f"case {case}: masked and stripped logits differ")
                break
        if failures:
            break
    return SuiteResult(
        "mask_conformance", not failures, cases, failures[0] if failures else "ok",
        time.monotonic() - t0,
    )


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "merge_invariance": suite_merge_invariance,
    "pipeline_equivalence": suite_pipeline_equivalence,
    "sampler_oracles": suite_sampler_oracles,
    "estimator_enumeration": suite_estimator_enumeration,
    "mask_conformance": suite_mask_conformance,
}


def corrupted_merge(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Debug-only fault injection: an order-dependent weighted reduction.

    Used to demonstrate that the merge-invariance suite actually detects a
    broken reduction; never part of a decode path.
    """
    vecs = [np.asarray(v, dtype=np.float64) for v in vectors]
    acc = np.zeros_like(vecs[0])
    for i, v in enumerate(vecs):
        acc += v * (1.0 + 1e-3 * i)
    return (acc / len(vecs)).astype(np.float32)
