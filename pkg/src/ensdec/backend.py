"""Logits providers: deterministic toy models and an HTTP client.

Backends are stateless: ``next_logits`` is a pure function of each context,
and batching never changes results. The two toy backends exist so decode
semantics can be verified at desk scale with bitwise-stable fixtures; the
HTTP client speaks the wire protocol (GET /v1/meta, POST /v1/logits) served
by the bridge for real models.

Pinned toy-hash definition (an independent implementation must reproduce
fixtures bit for bit):

* key = FNV-1a-64 (offset 0xcbf29ce484222325, prime 0x100000001b3) over the
  last min(len, m) token ids, each serialized as 4 little-endian bytes,
  XORed with the seed.
* logit[v] = float32(10*u - 5) with u = (splitmix64(key ^ v) >> 11) * 2^-53.
* Termination bias: when len(context) >= force_after and delimiter_first_id
  does not occur anywhere in the context, +20 is added to that id's logit
  (computed in float64 before the single float32 rounding).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Optional, Sequence

import numpy as np

from .logits import check_logits
from .rng import splitmix64

if TYPE_CHECKING:
    from .pipeline import PaddedBatch

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1

RETRY_SLEEPS_MS = (100, 200, 400)


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    """Retryable transport-level failure (network, overload)."""


class ContractError(BackendError):
    """Fatal contract violation (bad schema, oversize context, unknown id)."""


@dataclass(frozen=True)
class BackendDescriptor:
    vocab_size: int
    eos_id: int
    pad_id: int
    supports_mask: bool
    max_context: int
    model: str = ""

    def __post_init__(self) -> None:
        if self.vocab_size < 1 or self.max_context < 1:
            raise ValueError("vocab_size and max_context must be positive")


class Backend:
    """Abstract next-token logits provider."""

    descriptor: BackendDescriptor

    def next_logits(self, contexts: Sequence[Sequence[int]]) -> list[np.ndarray]:
        """One finite float32 logit vector per context, in order."""
        self._check_contexts(contexts)
        return [self._logits_for(tuple(int(t) for t in c)) for c in contexts]

    def next_logits_masked(self, batch: "PaddedBatch") -> list[np.ndarray]:
        """Logits for a padded batch; equal to next_logits on the
        pad-stripped logical contexts."""
        if not self.descriptor.supports_mask:
            raise ContractError(f"backend {type(self).__name__} does not support masked batches")
        return self.next_logits([batch.stripped(k) for k in range(len(batch.rows))])

    def _logits_for(self, context: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError

    def _check_contexts(self, contexts: Sequence[Sequence[int]]) -> None:
        d = self.descriptor
        for i, c in enumerate(contexts):
            if len(c) > d.max_context:
                raise ContractError(f"context {i} has {len(c)} tokens, max_context is {d.max_context}")
            for t in c:
                if not 0 <= int(t) < d.vocab_size:
                    raise ContractError(f"context {i} contains unknown token id {t}")


def toy_hash_logits(
    context: Sequence[int],
    seed: int,
    vocab_size: int,
    m: int = 8,
    force_after: int = 1 << 30,
    delimiter_first_id: int = 0,
) -> np.ndarray:
    """Deterministic pseudo-random logits keyed on the context suffix.

    Base logits lie in [-5, 5]; once the context reaches ``force_after``
    tokens without ``delimiter_first_id`` occurring anywhere in it, that id
    gets a +20 bias so every trace terminates. Integer arithmetic only,
    with one exact float conversion per entry, so vectors are bitwise
    stable across platforms.
    """
    if m < 1:
        raise ValueError(f"hash window m must be >= 1, got {m}")
    ctx = tuple(int(t) for t in context)
    h = FNV_OFFSET
    for t in ctx[-m:]:
        for b in t.to_bytes(4, "little"):
            h = ((h ^ b) * FNV_PRIME) & _U64
    key = h ^ (seed & _U64)
    with np.errstate(over="ignore"):
        z = np.bitwise_xor(np.uint64(key), np.arange(vocab_size, dtype=np.uint64))
        z = (z + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(_U64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
    vals = 10.0 * u - 5.0
    if len(ctx) >= force_after and delimiter_first_id not in ctx:
        vals[delimiter_first_id] += 20.0
    return vals.astype(np.float32)


class ToyHashBackend(Backend):
    """Stand-in LLM: logits from a pinned hash of the context suffix."""

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
        self.seed = seed
        self.m = m
        self.force_after = force_after
        self.delimiter_first_id = delimiter_first_id
        self.descriptor = BackendDescriptor(
            vocab_size=vocab_size,
            eos_id=eos_id,
            pad_id=pad_id,
            supports_mask=True,
            max_context=max_context,
            model="toy-hash",
        )

    def _logits_for(self, context: tuple[int, ...]) -> np.ndarray:
        return toy_hash_logits(
            context,
            seed=self.seed,
            vocab_size=self.descriptor.vocab_size,
            m=self.m,
            force_after=self.force_after,
            delimiter_first_id=self.delimiter_first_id,
        )


class ScriptedBackend(Backend):
    """Hand-authored logits table for decode oracles.

    The script maps context suffixes to explicit rows; the longest matching
    suffix wins, falling back to a default row.
    """

    def __init__(
        self,
        vocab_size: int,
        rules: Sequence[tuple[Sequence[int], Sequence[float]]],
        default: Sequence[float],
        eos_id: int = 1,
        pad_id: int = 0,
        max_context: int = 1 << 16,
    ) -> None:
        self.rules: list[tuple[tuple[int, ...], np.ndarray]] = []
        for suffix, row in rules:
            vec = np.asarray(row, dtype=np.float32)
            if vec.shape != (vocab_size,):
                raise ValueError(
                    f"scripted row for suffix {tuple(suffix)} has length {vec.shape[0]}, "
                    f"expected {vocab_size}"
                )
            self.rules.append((tuple(int(t) for t in suffix), check_logits(vec)))
        self.rules.sort(key=lambda r: (-len(r[0]), r[0]))  # longest suffix first
        self.default = np.asarray(default, dtype=np.float32)
        if self.default.shape != (vocab_size,):
            raise ValueError(f"default row has length {self.default.shape[0]}, expected {vocab_size}")
        check_logits(self.default)
        self.descriptor = BackendDescriptor(
            vocab_size=vocab_size,
            eos_id=eos_id,
            pad_id=pad_id,
            supports_mask=True,
            max_context=max_context,
            model="toy-scripted",
        )

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ScriptedBackend":
        try:
            return cls(
                vocab_size=int(obj["vocab_size"]),
                rules=[(r["suffix"], r["logits"]) for r in obj.get("rules", [])],
                default=obj["default"],
                eos_id=int(obj.get("eos_id", 1)),
                pad_id=int(obj.get("pad_id", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed script: {exc}") from exc

    def _logits_for(self, context: tuple[int, ...]) -> np.ndarray:
        for suffix, row in self.rules:
            if len(context) >= len(suffix) and context[-len(suffix):] == suffix:
                return row.copy()
        return self.default.copy()


class HttpBackend(Backend):
    """Client for a remote logits server speaking the wire protocol.

    Transport failures and 503s are retried with bounded backoff; schema
    violations are fatal. Responses may be dense or top-truncated sparse
    rows, which are inflated with the row's stated fill value.
    """

    def __init__(
        self,
        endpoint: str,
        top: Optional[int] = None,
        timeout: float = 30.0,
        max_inflight: int = 8,
    ) -> None:
        import httpx
        import threading

        self.endpoint = endpoint.rstrip("/")
        self.top = top
        self._client = httpx.Client(
            timeout=timeout,
            limits=httpx.Limits(max_connections=max_inflight),
        )
        self._gate = threading.Semaphore(max_inflight)
        meta = self._request("GET", "/v1/meta")
        try:
            self.descriptor = BackendDescriptor(
                vocab_size=int(meta["vocab_size"]),
                eos_id=int(meta["eos_id"]),
                pad_id=int(meta["pad_id"]),
                supports_mask=bool(meta["supports_mask"]),
                max_context=int(meta["max_context"]),
                model=str(meta.get("model", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"bad /v1/meta response: {exc}") from exc

    def close(self) -> None:
        self._client.close()

    def next_logits(self, contexts: Sequence[Sequence[int]]) -> list[np.ndarray]:
        self._check_contexts(contexts)
        body: dict[str, Any] = {"contexts": [[int(t) for t in c] for c in contexts]}
        return self._post_logits(body, len(contexts))

    def next_logits_masked(self, batch: "PaddedBatch") -> list[np.ndarray]:
        if not self.descriptor.supports_mask:
            raise ContractError("server does not support masked batches")
        body: dict[str, Any] = {
            "contexts": [[int(t) for t in row] for row in batch.rows],
            "mask": [[bool(b) for b in row] for row in batch.mask],
        }
        return self._post_logits(body, len(batch.rows))

    def _post_logits(self, body: dict[str, Any], expect_rows: int) -> list[np.ndarray]:
        if self.top is not None:
            body["top"] = int(self.top)
        data = self._request("POST", "/v1/logits", body)
        size = self.descriptor.vocab_size
        try:
            if "logits" in data:
                rows = data["logits"]
                if len(rows) != expect_rows:
                    raise contract_rows(expect_rows, len(rows))
                return [check_logits(np.asarray(r, dtype=np.float32), size) for r in rows]
            rows = data["sparse"]
            if len(rows) != expect_rows:
                raise contract_rows(expect_rows, len(rows))
            out = []
            for r in rows:
                vec = np.full(size, np.float32(r["fill"]), dtype=np.float32)
                ids = np.asarray(r["ids"], dtype=np.int64)
                vec[ids] = np.asarray(r["values"], dtype=np.float32)
                out.append(check_logits(vec, size))
            return out
        except ContractError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ContractError(f"bad /v1/logits response: {exc}") from exc

    def _request(self, method: str, path: str, body: Optional[dict[str, Any]] = None) -> dict[str, Any]:
        import httpx

        url = self.endpoint + path
        last: Exception | None = None
        for attempt in range(len(RETRY_SLEEPS_MS) + 1):
            if attempt > 0:
                time.sleep(RETRY_SLEEPS_MS[attempt - 1] / 1000.0)
            try:
                with self._gate:
                    resp = self._client.request(method, url, json=body)
            except httpx.HTTPError as exc:
                last = TransportError(f"{method} {url}: {exc}")
                continue
            if resp.status_code == 200:
                return resp.json()
            kind, detail = _error_envelope(resp)
            if resp.status_code == 503 or kind == "overloaded":
                last = TransportError(f"{method} {url}: overloaded: {detail}")
                continue
            raise ContractError(f"{method} {url}: {resp.status_code} {kind}: {detail}")
        raise last if last is not None else TransportError(f"{method} {url}: retries exhausted")


def contract_rows(expected: int, got: int) -> ContractError:
    return ContractError(f"server returned {got} rows, expected {expected}")


def _error_envelope(resp: Any) -> tuple[str, str]:
    try:
        err = resp.json()["error"]
        return str(err.get("kind", "internal")), str(err.get("detail", ""))
    except Exception:
        return "internal", resp.text[:200]
