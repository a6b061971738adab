"""Bridge configuration: which model to serve and how."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .toyhash import ToyHashModel


@dataclass
class BridgeConfig:
    model: str  # "toy-hash" or a HF model id / local path
    toy: dict[str, Any] = field(default_factory=dict)
    host: str = "127.0.0.1"
    port: int = 8711
    max_batch: int = 64
    top: Optional[int] = None
    max_context: Optional[int] = None
    device: str = "cpu"

    @classmethod
    def load(cls, path: str) -> "BridgeConfig":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(obj, dict) or "model" not in obj:
            raise ValueError(f"{path}: config must be a JSON object with a 'model' field")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"{path}: unknown fields {sorted(unknown)}")
        return cls(**obj)

    def build_provider(self):
        if self.model == "toy-hash":
            return ToyHashModel(**self.toy)
        from .model import CausalLmModel

        return CausalLmModel(self.model, max_context=self.max_context, device=self.device)
