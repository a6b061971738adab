"""logits-bridge: minimal HTTP server exposing next-token logits.

Implements the decoding engine's wire protocol (GET /v1/meta, POST
/v1/logits) over either a real causal language model or the deterministic
toy-hash model used for loopback conformance testing.
"""

from .config import BridgeConfig
from .server import build_app, serve
from .toyhash import ToyHashModel

__version__ = "0.1.0"

__all__ = ["BridgeConfig", "ToyHashModel", "build_app", "serve"]
