"""Numerics on next-token score vectors: merging, temperature, softmax.

Logit vectors are float32 numpy arrays (one entry per vocabulary id);
probability vectors are float64. Reductions are pinned for reproducibility:
merging accumulates in float64, summing inputs in ascending trace-index
order, divides once by K, and rounds back to float32. The same transcript
therefore falls out of every run and every thread schedule.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

PROB_SUM_TOL = 1e-6


def check_logits(values: np.ndarray, size: int | None = None) -> np.ndarray:
    """Validate a backend-produced logit vector; returns it as float32."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError(f"logit vector must be 1-D, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"logit vector length {arr.shape[0]} != vocabulary size {size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logit vector contains non-finite entries")
    return arr


def check_probs(values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"probability vector must be 1-D, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("probability vector has negative entries")
    if abs(float(arr.sum()) - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probability vector sums to {arr.sum()}, not 1")
    return arr


def _validated_stack(vectors: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(vectors) == 0:
        raise ValueError("cannot merge an empty list of logit vectors")
    out = [check_logits(v) for v in vectors]
    length = out[0].shape[0]
    for i, v in enumerate(out):
        if v.shape[0] != length:
            raise ValueError(f"logit vector {i} has length {v.shape[0]}, expected {length}")
    return out


def merge_logits(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Component-wise arithmetic mean of K logit vectors.

    Inputs are consumed in list order (trace-index order); the division by
    K happens once, after the full sum.
    """
    vecs = _validated_stack(vectors)
    acc = np.zeros(vecs[0].shape[0], dtype=np.float64)
    for v in vecs:
        acc += v.astype(np.float64)
    return (acc / len(vecs)).astype(np.float32)


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax, stabilized by max subtraction.

    Accepts -inf entries as masked-out ids (they get probability zero);
    at least one entry must be finite.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    arr = np.asarray(logits, dtype=np.float64) / temperature
    hi = np.max(arr)
    if not np.isfinite(hi):
        raise ValueError("softmax needs at least one finite logit")
    ex = np.exp(arr - hi)
    return ex / ex.sum()


def merge_probs(vectors: Sequence[np.ndarray], temperature: float = 1.0) -> np.ndarray:
    """Probability-average ablation: softmax each vector, then mean.

    The temperature is applied inside each per-trace softmax; the averaged
    distribution is used as-is afterwards (no re-tempering). Reduction
    order matches ``merge_logits``.
    """
    vecs = _validated_stack(vectors)
    acc = np.zeros(vecs[0].shape[0], dtype=np.float64)
    for v in vecs:
        acc += softmax(v, temperature)
    return check_probs(acc / len(vecs))
