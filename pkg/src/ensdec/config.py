"""Run configuration: one self-describing JSON file per decoding run.

Everything that affects the transcript lives in the file (backend spec,
delimiter, strategy, sampling, merge mode, pipeline shape); the only
environment override is ``ENSDEC_HTTP_ENDPOINT`` for pointing an http
backend somewhere else. Violations are collected and reported with field
paths before any decoding starts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .backend import Backend, HttpBackend, ScriptedBackend, ToyHashBackend
from .core import (
    MergeMode,
    SamplingPolicy,
    StrategyConfig,
    StrategyKind,
    Vocabulary,
)
from .record import config_hash

BACKEND_KINDS = ("toy-hash", "toy-scripted", "http")
PIPELINES = ("two_stage", "one_step")


class ConfigError(Exception):
    """One or more invalid fields; ``errors`` lists path-qualified messages."""

    def __init__(self, errors: list[str]) -> None:
        self.errors = errors
        super().__init__("; ".join(errors))


class _Reader:
    def __init__(self, obj: dict[str, Any]) -> None:
        self.obj = obj
        self.errors: list[str] = []

    def get(self, path: str, typ: type, required: bool = True, default: Any = None) -> Any:
        node: Any = self.obj
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                if required:
                    self.errors.append(f"{path}: missing required field")
                return default
            node = node[part]
        if typ is float and isinstance(node, int) and not isinstance(node, bool):
            node = float(node)
        if typ is not object and not isinstance(node, typ):
            self.errors.append(f"{path}: expected {typ.__name__}, got {type(node).__name__}")
            return default
        if typ in (int, float) and isinstance(node, bool):
            self.errors.append(f"{path}: expected {typ.__name__}, got bool")
            return default
        return node


@dataclass
class RunConfig:
    backend_spec: dict[str, Any]
    delimiter: tuple[int, ...]
    strategy: StrategyConfig
    sampling: SamplingPolicy
    merge_mode: MergeMode
    pipeline: str
    prompts_path: Path
    output_path: Path
    config_dir: Path

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "RunConfig":
        p = Path(path)
        try:
            obj = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"{p}: {exc}"]) from exc
        if not isinstance(obj, dict):
            raise ConfigError([f"{p}: top level must be a JSON object"])
        return cls.parse(obj, p.parent)

    @classmethod
    def parse(cls, obj: dict[str, Any], config_dir: Path) -> "RunConfig":
        r = _Reader(obj)

        backend_spec = r.get("backend", dict, default={}) or {}
        kind = backend_spec.get("kind")
        if kind not in BACKEND_KINDS:
            r.errors.append(f"backend.kind: must be one of {BACKEND_KINDS}, got {kind!r}")

        delimiter = tuple(r.get("delimiter", list, default=[]) or [])
        if not delimiter:
            r.errors.append("delimiter: must be a non-empty token-id list")
        elif not all(isinstance(t, int) and t >= 0 for t in delimiter):
            r.errors.append("delimiter: entries must be non-negative token ids")

        strategy = None
        kind_name = r.get("strategy.kind", str, default="")
        try:
            strategy = StrategyConfig(
                kind=StrategyKind(kind_name),
                k=r.get("strategy.k", int, default=1),
                n=r.get("strategy.n", int, default=1),
                trim_suffix=r.get("strategy.trim_suffix", bool, required=False, default=False),
                max_think_tokens=r.get("strategy.max_think_tokens", int, default=1),
                max_answer_tokens=r.get("strategy.max_answer_tokens", int, default=1),
            )
        except ValueError as exc:
            r.errors.append(f"strategy: {exc}")

        sampling = None
        temp_think = r.get("sampling.temp_think", float, required=False, default=0.6)
        temp_answer = r.get("sampling.temp_answer", float, required=False, default=None)
        try:
            sampling = SamplingPolicy(
                temp_think=temp_think,
                # answer phase inherits the thinking temperature by default
                temp_answer=temp_think if temp_answer is None else temp_answer,
                top_k=r.get("sampling.top_k", int, required=False),
                top_p=r.get("sampling.top_p", float, required=False),
                repetition_penalty=r.get(
                    "sampling.repetition_penalty", float, required=False, default=1.0
                ),
                seed=r.get("sampling.seed", int, default=0),
                greedy=r.get("sampling.greedy", bool, required=False, default=False),
            )
        except ValueError as exc:
            r.errors.append(f"sampling: {exc}")

        merge_mode = r.get("merge_mode", str, required=False, default="logits")
        try:
            merge = MergeMode(merge_mode)
        except ValueError:
            r.errors.append(f"merge_mode: must be 'logits' or 'probs', got {merge_mode!r}")
            merge = MergeMode.LOGITS

        pipeline = r.get("pipeline", str, required=False, default="two_stage")
        if pipeline not in PIPELINES:
            r.errors.append(f"pipeline: must be one of {PIPELINES}, got {pipeline!r}")
        if pipeline == "one_step" and strategy is not None:
            if strategy.kind is not StrategyKind.DIRECT_MERGE:
                r.errors.append(
                    f"pipeline: one_step requires strategy.kind=direct_merge, got {strategy.kind.value}"
                )

        prompts = r.get("prompts", str, default="")
        output = r.get("output", str, default="")

        if r.errors:
            raise ConfigError(r.errors)
        assert strategy is not None and sampling is not None
        return cls(
            backend_spec=backend_spec,
            delimiter=delimiter,
            strategy=strategy,
            sampling=sampling,
            merge_mode=merge,
            pipeline=pipeline,
            prompts_path=cls._resolve(config_dir, prompts),
            output_path=cls._resolve(config_dir, output),
            config_dir=config_dir,
        )

    @staticmethod
    def _resolve(base: Path, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base / path

    def build_backend(self) -> Backend:
        spec = self.backend_spec
        kind = spec["kind"]
        if kind == "toy-hash":
            return ToyHashBackend(
                vocab_size=int(spec["vocab_size"]),
                seed=int(spec.get("seed", 0)),
                m=int(spec.get("m", 8)),
                force_after=int(spec.get("force_after", 1 << 30)),
                delimiter_first_id=self.delimiter[0],
                eos_id=int(spec.get("eos_id", 1)),
                pad_id=int(spec.get("pad_id", 0)),
            )
        if kind == "toy-scripted":
            script_path = self._resolve(self.config_dir, spec["path"])
            try:
                script = json.loads(script_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError([f"backend.path: {exc}"]) from exc
            try:
                return ScriptedBackend.from_json(script)
            except ValueError as exc:
                raise ConfigError([f"backend.path: {exc}"]) from exc
        endpoint = os.environ.get("ENSDEC_HTTP_ENDPOINT") or spec["endpoint"]
        top = spec.get("top")
        return HttpBackend(endpoint, top=None if top is None else int(top))

    def vocabulary(self, backend: Backend) -> Vocabulary:
        d = backend.descriptor
        try:
            return Vocabulary(
                size=d.vocab_size, eos_id=d.eos_id, pad_id=d.pad_id, delimiter=self.delimiter
            )
        except ValueError as exc:
            raise ConfigError([f"delimiter: {exc}"]) from exc

    def check_backend(self, backend: Backend) -> None:
        errors = []
        if self.pipeline == "one_step" and not backend.descriptor.supports_mask:
            errors.append("pipeline: one_step requires a backend with mask support")
        needed = self.strategy.max_think_tokens + self.strategy.max_answer_tokens
        if backend.descriptor.max_context < needed:
            errors.append(
                f"strategy: token budgets need max_context >= {needed}, "
                f"backend reports {backend.descriptor.max_context}"
            )
        if errors:
            raise ConfigError(errors)

    def semantic_hash(self, backend: Backend) -> str:
        """Config hash covering everything that shapes the transcript.

        File locations (prompts/output paths, script path, endpoint host)
        are excluded so records stay comparable when files move; scripted
        backends hash their script content instead of the path.
        """
        spec = dict(self.backend_spec)
        if spec.get("kind") == "toy-scripted":
            script_path = self._resolve(self.config_dir, spec["path"])
            spec = {"kind": "toy-scripted", "script": json.loads(script_path.read_text())}
        elif spec.get("kind") == "http":
            spec = {"kind": "http", "model": backend.descriptor.model, "top": spec.get("top")}
        from .core import policy_to_json, strategy_to_json

        return config_hash(
            {
                "backend": spec,
                "delimiter": list(self.delimiter),
                "strategy": strategy_to_json(self.strategy),
                "sampling": policy_to_json(self.sampling),
                "merge_mode": self.merge_mode.value,
                "pipeline": self.pipeline,
            }
        )
