"""openspan: span-based open-label named entity recognition.

A small, self-contained engine: differentiable numeric core, pluggable
subword tokenizers, candidate span machinery, bi- and cross-encoder span
scorers, four loss families, threshold-swept decoding and an exact-match
evaluation harness, all driven by one CLI.
"""

from .data import (
    CharNgramTokenizer,
    Entity,
    GoldSpan,
    LabelSet,
    ProvidedOffsetsTokenizer,
    RawExample,
    TokenizedExample,
    WhitespaceTokenizer,
    build_tokenizer,
    load_jsonl,
    remap_entities,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    OpenSpanError,
    SequenceOverflowError,
    TrainingError,
)
from .evaluation import DEFAULT_THRESHOLDS, EvalReport, decode, micro_f1, sweep_scored
from .heads import ModelConfig, SpanModel, span_logits
from .losses import LossConfig, compute_loss
from .optim import AdamW
from .serialization import load_checkpoint, save_checkpoint
from .spans import build_candidates, enumerate_spans, gradient_coverage, ratio_report
from .training import TrainConfig, TrainResult, evaluate_model, score_corpus, train

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "CharNgramTokenizer",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DEFAULT_THRESHOLDS",
    "Entity",
    "EvalReport",
    "GoldSpan",
    "LabelSet",
    "LossConfig",
    "ModelConfig",
    "OpenSpanError",
    "ProvidedOffsetsTokenizer",
    "RawExample",
    "SequenceOverflowError",
    "SpanModel",
    "TokenizedExample",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "WhitespaceTokenizer",
    "build_candidates",
    "build_tokenizer",
    "compute_loss",
    "decode",
    "enumerate_spans",
    "evaluate_model",
    "gradient_coverage",
    "load_checkpoint",
    "load_jsonl",
    "micro_f1",
    "ratio_report",
    "remap_entities",
    "save_checkpoint",
    "score_corpus",
    "span_logits",
    "sweep_scored",
    "train",
]
