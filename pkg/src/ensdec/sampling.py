"""Post-merge logit processing and token selection.

The processor stack runs in a fixed order: repetition penalty, top-k mask
(on logits, before softmax), temperature softmax, top-p (on probabilities),
then selection. Selection is either argmax (greedy; ties go to the lowest
token id) or an inverse-CDF draw using a single 53-bit uniform, scanning
ids in ascending order: the chosen id is the smallest i with u < cum[i].
"""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .core import EnsembleSession, SamplingPolicy
from .logits import check_probs, softmax
from .rng import Rng

NEG_INF = float("-inf")


def apply_repetition_penalty(
    logits: np.ndarray, history: Iterable[int], penalty: float
) -> np.ndarray:
    """Dampen ids already in ``history``.

    Positive scores are divided by the penalty, non-positive ones
    multiplied, so penalized entries always move toward (or past) zero.
    """
    if penalty < 1:
        raise ValueError(f"repetition penalty must be >= 1, got {penalty}")
    out = np.asarray(logits, dtype=np.float64).copy()
    if penalty == 1.0:
        return out
    ids = sorted({int(t) for t in history})
    for t in ids:
        if out[t] > 0:
            out[t] /= penalty
        else:
            out[t] *= penalty
    return out


def apply_top_k(logits: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest entries, masking the rest to -inf.

    Ties at the boundary keep the lower token ids.
    """
    if k < 1:
        raise ValueError(f"top_k must be >= 1, got {k}")
    arr = np.asarray(logits, dtype=np.float64).copy()
    size = arr.shape[0]
    if k >= size:
        return arr
    # lexsort: primary key -value (descending), secondary ascending id
    order = np.lexsort((np.arange(size), -arr))
    arr[order[k:]] = NEG_INF
    return arr


def apply_top_p(probs: np.ndarray, p: float) -> np.ndarray:
    """Nucleus filter: minimal descending-order prefix with mass >= p.

    At least one token always survives; survivors are renormalized. Ties
    in probability are ordered by ascending token id.
    """
    if not 0 < p <= 1:
        raise ValueError(f"top_p must lie in (0, 1], got {p}")
    arr = check_probs(probs).copy()
    if p == 1.0:
        return arr
    size = arr.shape[0]
    order = np.lexsort((np.arange(size), -arr))
    cum = np.cumsum(arr[order])
    keep = int(np.searchsorted(cum, p, side="left")) + 1
    keep = min(keep, size)
    arr[order[keep:]] = 0.0
    total = arr.sum()
    return arr / total


def select_token(probs: np.ndarray, policy: SamplingPolicy, rng: Optional[Rng]) -> int:
    """Pick a token id from a distribution.

    Greedy mode returns the argmax (lowest id on ties) and consumes no
    randomness. Sampling mode consumes exactly one draw.
    """
    arr = np.asarray(probs, dtype=np.float64)
    total = arr.sum()
    if total <= 0:
        raise ValueError("cannot select from an all-zero probability vector")
    if policy.greedy:
        return int(np.argmax(arr))
    if rng is None:
        raise ValueError("sampling mode requires an Rng")
    u = rng.next_f53()
    cum = np.cumsum(arr)
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= arr.shape[0]:  # u landed beyond the rounded-down total mass
        nonzero = np.nonzero(arr)[0]
        idx = int(nonzero[-1])
    return idx


def answer_distribution(
    merged: np.ndarray,
    history: Iterable[int],
    policy: SamplingPolicy,
    temperature: float,
) -> np.ndarray:
    """Run the processor stack on merged logits, returning the distribution."""
    work = apply_repetition_penalty(merged, history, policy.repetition_penalty)
    if policy.top_k is not None:
        work = apply_top_k(work, policy.top_k)
    probs = softmax(work, temperature)
    if policy.top_p is not None:
        probs = apply_top_p(probs, policy.top_p)
    return probs


def process_step(
    merged: np.ndarray,
    session: EnsembleSession,
    policy: SamplingPolicy,
    rng: Optional[Rng],
) -> int:
    """One answer step: process the merged logits and choose the next id.

    The repetition-penalty history is the shared answer prefix only; the
    K thinking traces are deliberately excluded so the answer distribution
    does not depend on trace count through the penalty.
    """
    probs = answer_distribution(merged, session.answer, policy, policy.temp_answer)
    return select_token(probs, policy, rng)
