"""Wire protocol server: GET /v1/meta, POST /v1/logits.

Request bodies are validated by hand so every rejection uses the protocol's
error envelope ({"error": {"kind", "detail"}} with status 400/503/500)
rather than a framework-specific shape. The server is stateless between
requests; capacity is bounded by the total number of in-flight context
rows, and requests beyond it receive 503 so clients retry.
"""

from __future__ import annotations

import threading
from typing import Any, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse


class ProtocolError(Exception):
    def __init__(self, kind: str, detail: str, status: int) -> None:
        self.kind = kind
        self.detail = detail
        self.status = status
        super().__init__(detail)


def bad_request(detail: str) -> ProtocolError:
    return ProtocolError("bad_request", detail, 400)


class _Capacity:
    """Counts in-flight context rows; over-capacity requests bounce."""

    def __init__(self, limit: int) -> None:
        self.limit = limit
        self._inflight = 0
        self._lock = threading.Lock()

    def acquire(self, rows: int) -> bool:
        with self._lock:
            if self._inflight + rows > self.limit:
                return False
            self._inflight += rows
            return True

    def release(self, rows: int) -> None:
        with self._lock:
            self._inflight -= rows


def _parse_contexts(body: dict[str, Any], vocab_size: int, max_context: int):
    contexts = body.get("contexts")
    if not isinstance(contexts, list) or not contexts:
        raise bad_request("'contexts' must be a non-empty list of token-id lists")
    for i, ctx in enumerate(contexts):
        if not isinstance(ctx, list):
            raise bad_request(f"contexts[{i}] is not a list")
        if len(ctx) > max_context:
            raise bad_request(f"contexts[{i}] has {len(ctx)} tokens, max_context is {max_context}")
        for t in ctx:
            if not isinstance(t, int) or isinstance(t, bool) or not 0 <= t < vocab_size:
                raise bad_request(f"contexts[{i}] contains invalid token id {t!r}")
    mask = body.get("mask")
    if mask is not None:
        if not isinstance(mask, list) or len(mask) != len(contexts):
            raise bad_request("'mask' must parallel 'contexts'")
        for i, (ctx, m) in enumerate(zip(contexts, mask)):
            if not isinstance(m, list) or len(m) != len(ctx):
                raise bad_request(f"mask[{i}] length differs from contexts[{i}]")
            if len(m) > 0 and not any(bool(b) for b in m):
                raise bad_request(f"mask[{i}] attends to nothing")
    top = body.get("top")
    if top is not None and (not isinstance(top, int) or isinstance(top, bool) or top < 1):
        raise bad_request("'top' must be a positive integer")
    return contexts, mask, top


def _sparse_row(row: np.ndarray, top: int) -> dict[str, Any]:
    size = row.shape[0]
    k = min(top, size)
    order = np.lexsort((np.arange(size), -row.astype(np.float64)))
    ids = sorted(int(i) for i in order[:k])
    values = [float(row[i]) for i in ids]
    fill = float(np.float32(min(values)) - np.float32(10.0))
    return {"ids": ids, "values": values, "fill": fill}


def build_app(provider, max_batch: int = 64, default_top: Optional[int] = None) -> FastAPI:
    app = FastAPI(title="logits-bridge", docs_url=None, redoc_url=None)
    meta = provider.meta()
    capacity = _Capacity(max_batch)
    app.state.capacity = capacity  # exposed for load-shedding tests

    @app.exception_handler(ProtocolError)
    async def protocol_error(_req: Request, exc: ProtocolError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status, content={"error": {"kind": exc.kind, "detail": exc.detail}}
        )

    @app.exception_handler(Exception)
    async def internal_error(_req: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(
            status_code=500, content={"error": {"kind": "internal", "detail": str(exc)}}
        )

    @app.get("/v1/meta")
    async def get_meta() -> dict[str, Any]:
        return meta

    @app.post("/v1/logits")
    async def post_logits(request: Request) -> dict[str, Any]:
        try:
            body = await request.json()
        except Exception:
            raise bad_request("body is not valid JSON")
        if not isinstance(body, dict):
            raise bad_request("body must be a JSON object")
        contexts, mask, top = _parse_contexts(body, meta["vocab_size"], meta["max_context"])
        if len(contexts) > capacity.limit:
            raise bad_request(f"batch of {len(contexts)} exceeds max batch {capacity.limit}")
        if top is None:
            top = default_top
        if not capacity.acquire(len(contexts)):
            raise ProtocolError("overloaded", "at capacity, retry shortly", 503)
        try:
            if mask is not None:
                rows = provider.logits_masked(contexts, mask)
            else:
                rows = provider.logits(contexts)
        except ValueError as exc:  # provider-level limits (e.g. empty context)
            raise bad_request(str(exc))
        finally:
            capacity.release(len(contexts))
        if top is not None:
            return {"sparse": [_sparse_row(row, top) for row in rows]}
        return {"logits": [[float(x) for x in row] for row in rows]}

    return app


def serve(provider, host: str, port: int, max_batch: int = 64,
          default_top: Optional[int] = None) -> None:
    import uvicorn

    app = build_app(provider, max_batch=max_batch, default_top=default_top)
    uvicorn.run(app, host=host, port=port, log_level="warning")
