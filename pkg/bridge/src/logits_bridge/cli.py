"""Entry point: load a bridge config and serve the wire protocol."""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .config import BridgeConfig
from .server import serve


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="logits-bridge",
        description="Serve per-step next-token logits over HTTP (GET /v1/meta, POST /v1/logits).",
    )
    parser.add_argument("--config", required=True, help="bridge config JSON path")
    parser.add_argument("--host", default=None, help="override bind host")
    parser.add_argument("--port", type=int, default=None, help="override bind port")
    args = parser.parse_args(argv)
    try:
        cfg = BridgeConfig.load(args.config)
        provider = cfg.build_provider()
    except (OSError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    host = args.host or cfg.host
    port = args.port if args.port is not None else cfg.port
    print(f"serving {provider.meta()['model']} on http://{host}:{port}")
    serve(provider, host, port, max_batch=cfg.max_batch, default_top=cfg.top)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
