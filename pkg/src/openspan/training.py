"""Training loop: batching with in-batch label unions, early stopping on
validation F1, and checkpoint-exact resumability.

Determinism contract: every random draw is derived from the root seed plus
a name and a counter (epoch index for shuffles), never from mutable global
state. Resuming from a checkpoint at step k therefore replays the exact
batch order the uninterrupted run would have seen from step k on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .autodiff import ComputationTape, Tensor, add, scale
from .data import GoldSpan, LabelSet, SubwordTokenizer, TokenizedExample
from .errors import CheckpointError, ConfigError, DataError, SequenceOverflowError, TrainingError
from .evaluation import (
    DEFAULT_THRESHOLDS,
    EvalReport,
    ScoredExample,
    sweep_scored,
)
from .heads import (
    ModelConfig,
    SpanModel,
    cross_encode,
    encode_labels,
    span_logits,
    tokenize_labels,
)
from .losses import LossConfig, compute_loss
from .optim import AdamW
from .seeding import derive_rng
from .spans import CandidateSpanSet, assign_gold, boundary_mask, enumerate_spans


@dataclass(frozen=True)
class TrainConfig:
    architecture: str = "bi"
    seed: int = 0
    # model dimensions
    d_model: int = 64
    d_mlp: int = 384
    d_width: int = 128
    mlp_hidden: int | None = None
    activation: str = "relu"
    max_span_len: int = 30
    max_seq_len: int = 512
    # optimization
    batch_size: int = 12
    max_steps: int = 1000
    lr: float = 3e-5
    encoder_lr: float | None = None  # separate rate for both encoder towers
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    # evaluation and stopping
    eval_every: int = 50
    early_stopping: bool = True
    patience: int = 3
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    mask_word_boundaries: bool = False

    def __post_init__(self):
        for name in ("batch_size", "eval_every", "patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name}: must be positive, got {getattr(self, name)}")
        if self.max_steps < 0:  # zero is a legal no-op run
            raise ConfigError(f"train.max_steps: must be non-negative, got {self.max_steps}")
        if self.lr <= 0 or (self.encoder_lr is not None and self.encoder_lr <= 0):
            raise ConfigError("train.lr: learning rates must be positive")
        if not self.thresholds:
            raise ConfigError("train.thresholds: must not be empty")

    def model_config(self, base_vocab_size: int) -> ModelConfig:
        return ModelConfig(
            architecture=self.architecture,
            base_vocab_size=base_vocab_size,
            d_model=self.d_model,
            d_mlp=self.d_mlp,
            d_width=self.d_width,
            mlp_hidden=self.mlp_hidden,
            max_span_len=self.max_span_len,
            max_seq_len=self.max_seq_len,
            activation=self.activation,
            seed=self.seed,
        )

    def to_json_dict(self) -> dict:
        return {
            "architecture": self.architecture, "seed": self.seed,
            "d_model": self.d_model, "d_mlp": self.d_mlp, "d_width": self.d_width,
            "mlp_hidden": self.mlp_hidden, "activation": self.activation,
            "max_span_len": self.max_span_len, "max_seq_len": self.max_seq_len,
            "batch_size": self.batch_size, "max_steps": self.max_steps,
            "lr": self.lr, "encoder_lr": self.encoder_lr,
            "weight_decay": self.weight_decay, "betas": list(self.betas),
            "eps": self.eps, "loss": self.loss.to_json_dict(),
            "eval_every": self.eval_every, "early_stopping": self.early_stopping,
            "patience": self.patience, "thresholds": list(self.thresholds),
            "mask_word_boundaries": self.mask_word_boundaries,
        }


@dataclass
class Batch:
    examples: list[TokenizedExample]
    indices: list[int]  # positions in the training corpus, for error messages
    label_set: LabelSet
    label_token_ids: list[list[int]]
    candidates: list[CandidateSpanSet]


def build_batch(
    examples: Sequence[TokenizedExample],
    indices: Sequence[int],
    label_tokenizer: SubwordTokenizer,
    max_span_len: int,
    mask_word_boundaries: bool = False,
) -> Batch:
    """Union the examples' label sets and remap gold indices into it.

    Each example is scored against the whole batch label set, so gold label
    indices must refer to the union, not the example's own set.
    """
    union: list[str] = []
    seen: set[str] = set()
    for ex in examples:
        for lab in ex.label_set:
            if lab not in seen:
                seen.add(lab)
                union.append(lab)
    label_set = LabelSet(union)
    candidates = []
    for ex in examples:
        remapped = [GoldSpan(g.start, g.end, label_set.index(ex.label_set.labels[g.label_index]))
                    for g in ex.gold_spans]
        spans = enumerate_spans(len(ex.tokens), max_span_len)
        gold, uncovered = assign_gold(spans, remapped, len(label_set))
        mask = (boundary_mask(spans, ex.word_boundaries, ex.token_offsets)
                if mask_word_boundaries else [True] * len(spans))
        candidates.append(CandidateSpanSet(
            spans=tuple(spans), gold=tuple(gold), mask=tuple(mask),
            uncovered=tuple(uncovered), n_tokens=len(ex.tokens),
            max_span_len=max_span_len))
    return Batch(
        examples=list(examples),
        indices=list(indices),
        label_set=label_set,
        label_token_ids=tokenize_labels(label_set, label_tokenizer),
        candidates=candidates,
    )


def _batch_order(seed: int, n_examples: int, batch_size: int, step: int) -> list[int]:
    """Corpus indices for 1-based `step`: seeded shuffle per epoch, sliced."""
    per_epoch = max(1, math.ceil(n_examples / batch_size))
    epoch = (step - 1) // per_epoch
    slot = (step - 1) % per_epoch
    perm = derive_rng(seed, "shuffle", epoch).permutation(n_examples)
    return perm[slot * batch_size:(slot + 1) * batch_size].tolist()


def _batch_loss(model: SpanModel, batch: Batch, loss_cfg: LossConfig) -> Tensor:
    """Mean over the batch's examples of each example's pair-mean loss."""
    per_example: list[Tensor] = []
    if model.architecture == "bi":
        # one label-tower pass per batch, shared across examples
        h_y = encode_labels(batch.label_token_ids, model.label_encoder, model.reserved)
        for ex, cand in zip(batch.examples, batch.candidates):
            h_x = model.text_encoder.encode(ex.token_ids)
            grid = span_logits(h_x, h_y, cand, model.heads, batch.label_set)
            per_example.append(compute_loss(grid, loss_cfg, model.heads.threshold_logit))
    else:
        for ex, cand in zip(batch.examples, batch.candidates):
            h_x, h_y = cross_encode(ex.token_ids, batch.label_token_ids,
                                    model.text_encoder, model.reserved)
            grid = span_logits(h_x, h_y, cand, model.heads, batch.label_set)
            per_example.append(compute_loss(grid, loss_cfg, model.heads.threshold_logit))
    total = per_example[0]
    for t in per_example[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(per_example))


@dataclass
class TrainResult:
    model: SpanModel
    optimizer: AdamW
    step: int
    metrics: list[dict]
    best_step: int | None
    best_val_f1: float | None
    stopped_early: bool
    skipped_batches: int


def train(
    config: TrainConfig,
    train_examples: Sequence[TokenizedExample],
    val_examples: Sequence[TokenizedExample] | None,
    tokenizer: SubwordTokenizer,
    label_tokenizer: SubwordTokenizer | None = None,
    model: SpanModel | None = None,
    optimizer: AdamW | None = None,
    start_step: int = 0,
    metrics_path: str | Path | None = None,
    eval_hook: Callable[[SpanModel, int], float] | None = None,
) -> TrainResult:
    """Run the optimization loop.

    Pass `model`, `optimizer` and `start_step` from a loaded checkpoint to
    resume; the batch order continues exactly where it left off. `eval_hook`
    replaces the validation computation (it receives the model and the step
    and returns the score) and exists so stopping logic is testable with a
    scripted score sequence.
    """
    if not train_examples:
        raise TrainingError("training corpus is empty")
    label_tokenizer = label_tokenizer or tokenizer
    if label_tokenizer.vocabulary_size != tokenizer.vocabulary_size:
        raise ConfigError(
            "label tokenizer and text tokenizer must share one vocabulary size")
    if model is None:
        model = SpanModel(config.model_config(tokenizer.vocabulary_size))
    elif model.config.base_vocab_size != tokenizer.vocabulary_size:
        raise CheckpointError(
            f"model was built for a vocabulary of {model.config.base_vocab_size}, "
            f"tokenizer provides {tokenizer.vocabulary_size}")
    if optimizer is None:
        overrides = {}
        if config.encoder_lr is not None:
            overrides = {"text_encoder": config.encoder_lr, "label_encoder": config.encoder_lr}
        optimizer = AdamW(model.parameters(), lr=config.lr, betas=config.betas,
                          eps=config.eps, weight_decay=config.weight_decay,
                          lr_overrides=overrides)

    do_eval = eval_hook is not None or (val_examples is not None and len(val_examples) > 0)
    metrics: list[dict] = []
    metrics_file = open(metrics_path, "w", encoding="utf-8") if metrics_path else None

    def emit(record: dict) -> None:
        metrics.append(record)
        if metrics_file:
            metrics_file.write(json.dumps(record, sort_keys=True) + "\n")
            metrics_file.flush()

    def validation_score(step: int) -> tuple[float, float | None]:
        if eval_hook is not None:
            return float(eval_hook(model, step)), None
        report = evaluate_model(model, {"val": list(val_examples)}, tokenizer,
                                label_tokenizer=label_tokenizer,
                                thresholds=config.thresholds,
                                max_span_len=config.max_span_len,
                                mask_word_boundaries=config.mask_word_boundaries)
        best_t, best_f1 = None, -1.0
        for t in config.thresholds:
            f1 = report.macro_f1(t)
            if f1 > best_f1:
                best_t, best_f1 = t, f1
        return best_f1, best_t

    best_val = -math.inf
    best_step: int | None = None
    best_snapshot: tuple[dict, dict, int] | None = None
    non_improving = 0
    skipped = 0
    stopped_early = False
    step = start_step

    def snapshot() -> tuple[dict, dict, int]:
        return ({name: p.data.copy() for name, p in model.parameters().items()},
                optimizer.state_dict(), step)

    try:
        while step < config.max_steps:
            step += 1
            picked = _batch_order(config.seed, len(train_examples), config.batch_size, step)
            batch_examples = [train_examples[i] for i in picked]
            try:
                batch = build_batch(batch_examples, picked, label_tokenizer,
                                    config.max_span_len, config.mask_word_boundaries)
                with ComputationTape() as tape:
                    loss = _batch_loss(model, batch, config.loss)
            except SequenceOverflowError as exc:
                # cross arrangement: batch label set does not fit beside the
                # text; skip loudly rather than truncate silently
                skipped += 1
                emit({"step": step, "skipped": True, "reason": str(exc),
                      "examples": picked})
                continue
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingError(
                    f"non-finite loss {loss_value} at step {step} "
                    f"for examples {picked}")
            tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            emit({"step": step, "loss": loss_value})

            if do_eval and step % config.eval_every == 0:
                score, best_t = validation_score(step)
                record = {"step": step, "val_macro_f1": score}
                if best_t is not None:
                    record["best_t"] = best_t
                emit(record)
                if score > best_val:
                    best_val = score
                    best_step = step
                    best_snapshot = snapshot()
                    non_improving = 0
                else:
                    non_improving += 1
                    if config.early_stopping and non_improving >= config.patience:
                        stopped_early = True
                        break
    finally:
        if metrics_file:
            metrics_file.close()

    if config.early_stopping and best_snapshot is not None:
        params, opt_state, snap_step = best_snapshot
        for name, p in model.parameters().items():
            p.data = params[name]
        optimizer.load_state_dict(opt_state)
        step = snap_step

    return TrainResult(
        model=model,
        optimizer=optimizer,
        step=step,
        metrics=metrics,
        best_step=best_step,
        best_val_f1=None if best_val == -math.inf else best_val,
        stopped_early=stopped_early,
        skipped_batches=skipped,
    )


# ---------------------------------------------------------------------------
# corpus evaluation


def _dataset_label_set(examples: Sequence[TokenizedExample], dataset: str) -> LabelSet:
    label_set = examples[0].label_set
    for ex in examples[1:]:
        if ex.label_set != label_set:
            raise DataError(
                f"dataset {dataset!r}: examples disagree on the label set; "
                "ingest them with one shared LabelSet")
    return label_set


def score_corpus(
    model: SpanModel,
    corpus: Mapping[str, Sequence[TokenizedExample]],
    tokenizer: SubwordTokenizer,
    label_tokenizer: SubwordTokenizer | None = None,
    max_span_len: int | None = None,
    mask_word_boundaries: bool = False,
) -> list[ScoredExample]:
    """One scoring pass per example; the frozen logits feed any number of
    threshold decodes. The bi arrangement scores through a per-dataset label
    cache, the cross arrangement re-encodes per example."""
    label_tokenizer = label_tokenizer or tokenizer
    if tokenizer.vocabulary_size != model.config.base_vocab_size:
        raise CheckpointError(
            f"model was built for a vocabulary of {model.config.base_vocab_size}, "
            f"tokenizer provides {tokenizer.vocabulary_size}")
    max_span_len = max_span_len or model.config.max_span_len
    if max_span_len > model.config.max_span_len:
        raise ConfigError(
            f"max_span_len {max_span_len} exceeds the model's width table "
            f"({model.config.max_span_len})")
    scored: list[ScoredExample] = []
    for dataset in sorted(corpus):
        examples = corpus[dataset]
        if not examples:
            continue
        label_set = _dataset_label_set(examples, dataset)
        label_ids = tokenize_labels(label_set, label_tokenizer)
        cache = model.build_label_cache(label_ids, label_set) if model.architecture == "bi" else None
        for ex in examples:
            spans = enumerate_spans(len(ex.tokens), max_span_len)
            gold, uncovered = assign_gold(spans, ex.gold_spans, len(label_set))
            mask = (boundary_mask(spans, ex.word_boundaries, ex.token_offsets)
                    if mask_word_boundaries else [True] * len(spans))
            cand = CandidateSpanSet(spans=tuple(spans), gold=tuple(gold),
                                    mask=tuple(mask), uncovered=tuple(uncovered),
                                    n_tokens=len(ex.tokens), max_span_len=max_span_len)
            if cache is not None:
                grid = model.score_with_cache(ex.token_ids, cache, cand)
            else:
                grid = model.score(ex.token_ids, label_ids, cand, label_set)
            scored.append(ScoredExample(
                dataset=dataset,
                language=ex.language,
                candidates=cand,
                logits=grid.logits.data.copy(),
                gold=ex.gold_spans,
                dropped=len(ex.dropped_entities),
            ))
    return scored


def evaluate_model(
    model: SpanModel,
    corpus: Mapping[str, Sequence[TokenizedExample]],
    tokenizer: SubwordTokenizer,
    label_tokenizer: SubwordTokenizer | None = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    max_span_len: int | None = None,
    mask_word_boundaries: bool = False,
    seed: int | None = None,
) -> EvalReport:
    scored = score_corpus(model, corpus, tokenizer, label_tokenizer,
                          max_span_len, mask_word_boundaries)
    return sweep_scored(scored, thresholds, seed=seed)
