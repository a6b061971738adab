"""Causal LM provider: per-step next-token logits over HTTP-shaped batches.

The bridge is stateless across requests (no KV reuse in v1), runs the
model in float32 eval mode on CPU/GPU, and reduces a batch of unequal
contexts to one left-padded forward pass. For masked requests the caller's
mask is used verbatim; positions are renumbered over attended tokens so a
padded row computes exactly what its pad-stripped context would.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


class CausalLmModel:
    def __init__(self, model_path: str, max_context: Optional[int] = None,
                 device: str = "cpu") -> None:
        import torch
        from transformers import AutoConfig, AutoModelForCausalLM, AutoTokenizer

        self._torch = torch
        torch.manual_seed(0)
        self.model = AutoModelForCausalLM.from_pretrained(model_path, torch_dtype=torch.float32)
        self.model.to(device)
        self.model.eval()
        self.device = device
        config = AutoConfig.from_pretrained(model_path)

        eos_id = config.eos_token_id
        pad_id = getattr(config, "pad_token_id", None)
        vocab_size = int(config.vocab_size)
        try:
            tokenizer = AutoTokenizer.from_pretrained(model_path)
        except Exception:
            tokenizer = None
        # some transformers versions hand back a degenerate tokenizer when
        # the files are absent; only trust one that actually has a vocab
        if tokenizer is not None and getattr(tokenizer, "vocab_size", 0):
            vocab_size = int(tokenizer.vocab_size)
            if tokenizer.eos_token_id is not None:
                eos_id = tokenizer.eos_token_id
            if tokenizer.pad_token_id is not None:
                pad_id = tokenizer.pad_token_id
        if eos_id is None:
            raise ValueError(f"{model_path}: no eos_token_id in tokenizer or config")
        if pad_id is None or pad_id == eos_id:
            # the engine requires pad != eos; pick the lowest free id
            pad_id = 0 if eos_id != 0 else 1
        self.vocab_size = vocab_size
        self.eos_id = int(eos_id)
        self.pad_id = int(pad_id)
        self.max_context = int(
            max_context
            or getattr(config, "max_position_embeddings", None)
            or getattr(config, "n_positions", 2048)
        )
        self.name = str(model_path)

    def meta(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "eos_id": self.eos_id,
            "pad_id": self.pad_id,
            "supports_mask": True,
            "max_context": self.max_context,
            "model": self.name,
        }

    def _forward(self, rows, mask) -> list[np.ndarray]:
        if any(not any(m) for m in mask):
            raise ValueError("a causal LM needs at least one attended token per context")
        torch = self._torch
        input_ids = torch.tensor(rows, dtype=torch.long, device=self.device)
        attention = torch.tensor(mask, dtype=torch.long, device=self.device)
        # attended tokens get consecutive positions, as if pads were absent
        positions = (attention.cumsum(dim=1) - 1).clamp(min=0)
        with torch.no_grad():
            out = self.model(
                input_ids=input_ids, attention_mask=attention, position_ids=positions
            )
        # next-token logits live at each row's last attended position
        last = [max(j for j, b in enumerate(m) if b) for m in mask]
        gathered = out.logits[torch.arange(len(rows)), torch.tensor(last), :]
        return [row.cpu().numpy().astype(np.float32) for row in gathered]

    def logits(self, contexts: Sequence[Sequence[int]]) -> list[np.ndarray]:
        if not contexts:
            return []
        width = max(len(c) for c in contexts)
        rows, mask = [], []
        for c in contexts:
            pads = width - len(c)
            rows.append([self.pad_id] * pads + [int(t) for t in c])
            mask.append([0] * pads + [1] * len(c))
        return self._forward(rows, mask)

    def logits_masked(self, rows, mask) -> list[np.ndarray]:
        return self._forward(
            [[int(t) for t in r] for r in rows],
            [[1 if b else 0 for b in m] for m in mask],
        )
