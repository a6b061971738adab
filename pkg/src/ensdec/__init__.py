"""ensdec: backend-agnostic ensemble decoding.

Sample K parallel reasoning traces up to a delimiter, then decode one
shared answer by averaging the per-step next-token logits across all K
contexts. Ships trace-selection strategies (direct merge, early-ready,
shortest-K), suffix trimming, a probability-merge ablation, two pipeline
shapes that produce identical transcripts, deterministic toy backends, an
HTTP backend client, and a majority-voting / pass@k evaluation harness.
"""

from .backend import (
    Backend,
    BackendDescriptor,
    BackendError,
    ContractError,
    HttpBackend,
    ScriptedBackend,
    ToyHashBackend,
    TransportError,
    toy_hash_logits,
)
from .core import (
    EnsembleSession,
    MergeMode,
    Phase,
    SamplingPolicy,
    StopRule,
    StrategyConfig,
    StrategyKind,
    Trace,
    Vocabulary,
)
from .eval import ExtractionRule, extract_answer, majority_vote, normalize_answer, pass_at_k
from .logits import merge_logits, merge_probs, softmax
from .pipeline import (
    PaddedBatch,
    align_contexts,
    decode_answer,
    generate_thinking,
    run_one_step,
    run_two_stage,
)
from .record import DecodeRecord, read_records, write_records
from .rng import Rng, splitmix64
from .sampling import (
    apply_repetition_penalty,
    apply_top_k,
    apply_top_p,
    process_step,
    select_token,
)
from .scheduler import (
    NotReadyError,
    TracePool,
    detect_delimiter,
    select_traces,
    trim_repeated_suffix,
)

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendDescriptor",
    "BackendError",
    "ContractError",
    "DecodeRecord",
    "EnsembleSession",
    "ExtractionRule",
    "HttpBackend",
    "MergeMode",
    "NotReadyError",
    "PaddedBatch",
    "Phase",
    "Rng",
    "SamplingPolicy",
    "ScriptedBackend",
    "StopRule",
    "StrategyConfig",
    "StrategyKind",
    "ToyHashBackend",
    "Trace",
    "TracePool",
    "TransportError",
    "Vocabulary",
    "align_contexts",
    "apply_repetition_penalty",
    "apply_top_k",
    "apply_top_p",
    "decode_answer",
    "detect_delimiter",
    "extract_answer",
    "generate_thinking",
    "majority_vote",
    "merge_logits",
    "merge_probs",
    "normalize_answer",
    "pass_at_k",
    "process_step",
    "read_records",
    "run_one_step",
    "run_two_stage",
    "select_token",
    "select_traces",
    "softmax",
    "splitmix64",
    "toy_hash_logits",
    "trim_repeated_suffix",
    "write_records",
]
