"""Span scoring heads and the two encoder arrangements.

Hidden text states H_X and label states H_Y are produced either by one joint
pass over "[LABEL] label-tokens ... [SEP] text-tokens" (cross arrangement,
labels first so marker positions do not depend on the text), or by two
towers (bi arrangement: text tower for H_X, label tower whose first-position
vector represents each label description).

Scoring is the same in both cases: start and end MLPs over H_X, a label MLP
over H_Y, a span MLP over [s_i ; e_j ; width(j - i)], and a dot product
k_ij . q_n giving one logit per (candidate span, label).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, concat, matmul, take_rows, transpose
from .data import LabelSet, SubwordTokenizer
from .encoder import EncoderInterface, ReferenceEncoder, ReservedIds, reserved_ids
from .errors import ConfigError, DataError, SequenceOverflowError, StaleCacheError
from .nn import Mlp2, mlp2_forward
from .seeding import derive_rng, stable_hash_hex
from .spans import CandidateSpanSet

ARCHITECTURES = ("bi", "cross")


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    base_vocab_size: int
    d_model: int = 64
    d_mlp: int = 384
    d_width: int = 128
    mlp_hidden: int | None = None  # None: hidden width equals each MLP's output
    max_span_len: int = 30
    max_seq_len: int = 512
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture: expected one of {ARCHITECTURES}, got {self.architecture!r}")
        for name in ("base_vocab_size", "d_model", "d_mlp", "d_width", "max_span_len", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")

    def to_json_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "base_vocab_size": self.base_vocab_size,
            "d_model": self.d_model,
            "d_mlp": self.d_mlp,
            "d_width": self.d_width,
            "mlp_hidden": self.mlp_hidden,
            "max_span_len": self.max_span_len,
            "max_seq_len": self.max_seq_len,
            "activation": self.activation,
            "seed": self.seed,
        }


class HeadParams:
    """The four scoring MLPs, the span-width embedding table, and the
    learned decision threshold used by the contrastive objective."""

    def __init__(self, config: ModelConfig):
        rng = derive_rng(config.seed, "heads")
        d, dm, dw = config.d_model, config.d_mlp, config.d_width
        act = config.activation

        def hidden(d_out: int) -> int:
            return config.mlp_hidden if config.mlp_hidden else d_out

        self.start_mlp = Mlp2.create(rng, d, hidden(dm), dm, activation=act)
        self.end_mlp = Mlp2.create(rng, d, hidden(dm), dm, activation=act)
        self.label_mlp = Mlp2.create(rng, d, hidden(dm), dm, activation=act)
        self.span_mlp = Mlp2.create(rng, 2 * dm + dw, hidden(dm), dm, activation=act)
        bound = 1.0 / np.sqrt(dw)
        self.width_emb = Tensor(rng.uniform(-bound, bound, size=(config.max_span_len, dw)),
                                requires_grad=True, name="width_emb")
        self.threshold_logit = Tensor(0.0, requires_grad=True, name="threshold_logit")
        self.max_span_len = config.max_span_len

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for mlp_name in ("start_mlp", "end_mlp", "label_mlp", "span_mlp"):
            for k, v in getattr(self, mlp_name).parameters().items():
                out[f"{mlp_name}.{k}"] = v
        out["width_emb"] = self.width_emb
        out["threshold_logit"] = self.threshold_logit
        return out


@dataclass
class ScoreGrid:
    """One logit per (candidate span, label), plus what produced it."""

    logits: Tensor  # [num_spans x num_labels]
    candidates: CandidateSpanSet
    labels: LabelSet

    @property
    def num_spans(self) -> int:
        return self.logits.data.shape[0]

    @property
    def num_labels(self) -> int:
        return self.logits.data.shape[1]


def tokenize_labels(labels: LabelSet, tokenizer: SubwordTokenizer) -> list[list[int]]:
    return [[t.token_id for t in tokenizer.tokenize(lab)] for lab in labels]


def _fits_labels(label_token_ids: Sequence[Sequence[int]], budget: int) -> int:
    used = 0
    fits = 0
    for ids in label_token_ids:
        need = 1 + len(ids)  # marker plus description tokens
        if used + need > budget:
            break
        used += need
        fits += 1
    return fits


def cross_encode(
    text_ids: Sequence[int],
    label_token_ids: Sequence[Sequence[int]],
    encoder: EncoderInterface,
    reserved: ReservedIds,
) -> tuple[Tensor, Tensor]:
    """Joint pass: labels first, then [SEP], then the text.

    H_Y rows are the hidden states at the per-label marker positions; H_X
    rows are the hidden states at the text positions. Both therefore depend
    on the whole joint sequence. If everything does not fit the encoder
    length, the error reports how many labels would have fit.
    """
    seq: list[int] = []
    marker_positions: list[int] = []
    for ids in label_token_ids:
        marker_positions.append(len(seq))
        seq.append(reserved.label)
        seq.extend(ids)
    seq.append(reserved.sep)
    text_start = len(seq)
    seq.extend(int(i) for i in text_ids)
    if len(seq) > encoder.max_seq_len:
        budget = encoder.max_seq_len - len(text_ids) - 1
        raise SequenceOverflowError(
            f"joint sequence of {len(seq)} tokens exceeds the encoder maximum of "
            f"{encoder.max_seq_len}; only {_fits_labels(label_token_ids, max(budget, 0))} "
            f"of {len(label_token_ids)} labels would fit alongside this text",
            needed=len(seq), limit=encoder.max_seq_len,
            fits_labels=_fits_labels(label_token_ids, max(budget, 0)))
    h = encoder.encode(seq)
    h_y = take_rows(h, marker_positions)
    h_x = take_rows(h, list(range(text_start, len(seq))))
    return h_x, h_y


def bi_encode(
    text_ids: Sequence[int],
    label_token_ids: Sequence[Sequence[int]],
    text_encoder: EncoderInterface,
    label_encoder: EncoderInterface,
    reserved: ReservedIds,
) -> tuple[Tensor, Tensor]:
    """Two towers: H_X never sees the labels, so it is reusable across any
    label set; each H_Y row is the first-position vector of the label tower
    run on that one description."""
    h_x = text_encoder.encode(list(text_ids))
    h_y = encode_labels(label_token_ids, label_encoder, reserved)
    return h_x, h_y


def encode_labels(
    label_token_ids: Sequence[Sequence[int]],
    label_encoder: EncoderInterface,
    reserved: ReservedIds,
) -> Tensor:
    rows = []
    for ids in label_token_ids:
        if not ids:
            raise DataError("label description tokenizes to zero tokens")
        out = label_encoder.encode([reserved.cls] + [int(i) for i in ids])
        rows.append(take_rows(out, [0]))
    if not rows:
        return Tensor(np.zeros((0, label_encoder.hidden_dim)))
    return concat(rows, axis=0)


def span_logits(
    h_x: Tensor,
    h_y: Tensor,
    candidates: CandidateSpanSet,
    heads: HeadParams,
    labels: LabelSet,
) -> ScoreGrid:
    """Score every candidate against every label.

    Masked-out candidates are scored like any other; the mask only matters
    to losses and decoding. Spans at or above the width table size are a
    caller bug and raise.
    """
    for i, j in candidates.spans:
        if j - i >= heads.max_span_len:
            raise DataError(
                f"span ({i}, {j}) has width {j - i + 1}, beyond the cap of {heads.max_span_len}")
    q = mlp2_forward(h_y, heads.label_mlp) if h_y.data.shape[0] else Tensor(
        np.zeros((0, heads.label_mlp.d_out)))
    if len(candidates.spans) == 0:
        grid = Tensor(np.zeros((0, q.data.shape[0])))
        return ScoreGrid(logits=grid, candidates=candidates, labels=labels)
    s = mlp2_forward(h_x, heads.start_mlp)
    e = mlp2_forward(h_x, heads.end_mlp)
    starts = [i for i, _ in candidates.spans]
    ends = [j for _, j in candidates.spans]
    widths = [j - i for i, j in candidates.spans]
    feats = concat(
        [take_rows(s, starts), take_rows(e, ends), take_rows(heads.width_emb, widths)],
        axis=1)
    k = mlp2_forward(feats, heads.span_mlp)
    if q.data.shape[0] == 0:
        grid = Tensor(np.zeros((k.data.shape[0], 0)))
    else:
        grid = matmul(k, transpose(q))
    return ScoreGrid(logits=grid, candidates=candidates, labels=labels)


# ---------------------------------------------------------------------------
# label cache (bi arrangement only)


@dataclass(frozen=True)
class LabelCache:
    """Frozen label-side vectors plus a stamp of the parameters that made
    them. Scoring refuses a cache whose stamp no longer matches."""

    q: np.ndarray  # [num_labels x d_mlp]
    labels: LabelSet
    param_stamp: str


def _label_side_stamp(label_encoder: EncoderInterface, heads: HeadParams) -> str:
    h = []
    for name in sorted(label_encoder.parameters()):
        h.append(label_encoder.parameters()[name].data.tobytes())
    for name in sorted(heads.label_mlp.parameters()):
        h.append(heads.label_mlp.parameters()[name].data.tobytes())
    return stable_hash_hex(b"".join(h))


def label_cache_build(
    label_token_ids: Sequence[Sequence[int]],
    labels: LabelSet,
    label_encoder: EncoderInterface,
    heads: HeadParams,
    reserved: ReservedIds,
) -> LabelCache:
    if len(label_token_ids) != len(labels):
        raise DataError(f"{len(labels)} labels but {len(label_token_ids)} token lists")
    h_y = encode_labels(label_token_ids, label_encoder, reserved)
    if h_y.data.shape[0]:
        q = mlp2_forward(h_y, heads.label_mlp).data
    else:
        q = np.zeros((0, heads.label_mlp.d_out))
    return LabelCache(q=q.copy(), labels=labels,
                      param_stamp=_label_side_stamp(label_encoder, heads))


def label_cache_score(
    h_x: Tensor,
    cache: LabelCache,
    candidates: CandidateSpanSet,
    heads: HeadParams,
    label_encoder: EncoderInterface,
) -> ScoreGrid:
    """Bit-identical to fresh scoring with the same parameters."""
    stamp = _label_side_stamp(label_encoder, heads)
    if stamp != cache.param_stamp:
        raise StaleCacheError(
            "label cache was built under different label-side parameters; rebuild it")
    fake_h_y = Tensor(cache.q)  # already past the label MLP

    # reuse span_logits' span path but skip the label MLP: inline the tail
    for i, j in candidates.spans:
        if j - i >= heads.max_span_len:
            raise DataError(
                f"span ({i}, {j}) has width {j - i + 1}, beyond the cap of {heads.max_span_len}")
    if len(candidates.spans) == 0:
        return ScoreGrid(logits=Tensor(np.zeros((0, cache.q.shape[0]))),
                         candidates=candidates, labels=cache.labels)
    s = mlp2_forward(h_x, heads.start_mlp)
    e = mlp2_forward(h_x, heads.end_mlp)
    starts = [i for i, _ in candidates.spans]
    ends = [j for _, j in candidates.spans]
    widths = [j - i for i, j in candidates.spans]
    feats = concat(
        [take_rows(s, starts), take_rows(e, ends), take_rows(heads.width_emb, widths)],
        axis=1)
    k = mlp2_forward(feats, heads.span_mlp)
    if cache.q.shape[0] == 0:
        grid = Tensor(np.zeros((k.data.shape[0], 0)))
    else:
        grid = matmul(k, transpose(fake_h_y))
    return ScoreGrid(logits=grid, candidates=candidates, labels=cache.labels)


# ---------------------------------------------------------------------------
# model bundle


class SpanModel:
    """Everything trainable under one roof, by architecture."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.reserved = reserved_ids(config.base_vocab_size)
        vocab = config.base_vocab_size + 3  # [CLS], [LABEL], [SEP]
        self.text_encoder = ReferenceEncoder(
            vocab, config.d_model, config.max_seq_len,
            seed=int(derive_rng(config.seed, "text-tower").integers(2**63)))
        if config.architecture == "bi":
            self.label_encoder = ReferenceEncoder(
                vocab, config.d_model, config.max_seq_len,
                seed=int(derive_rng(config.seed, "label-tower").integers(2**63)))
        else:
            self.label_encoder = None
        self.heads = HeadParams(config)

    @property
    def architecture(self) -> str:
        return self.config.architecture

    def parameters(self) -> dict[str, Tensor]:
        out = {f"text_encoder.{k}": v for k, v in self.text_encoder.parameters().items()}
        if self.label_encoder is not None:
            out.update({f"label_encoder.{k}": v for k, v in self.label_encoder.parameters().items()})
        out.update({f"heads.{k}": v for k, v in self.heads.parameters().items()})
        return out

    def encode(self, text_ids: Sequence[int],
               label_token_ids: Sequence[Sequence[int]]) -> tuple[Tensor, Tensor]:
        if self.architecture == "cross":
            return cross_encode(text_ids, label_token_ids, self.text_encoder, self.reserved)
        return bi_encode(text_ids, label_token_ids, self.text_encoder,
                         self.label_encoder, self.reserved)

    def score(self, text_ids: Sequence[int], label_token_ids: Sequence[Sequence[int]],
              candidates: CandidateSpanSet, labels: LabelSet) -> ScoreGrid:
        h_x, h_y = self.encode(text_ids, label_token_ids)
        return span_logits(h_x, h_y, candidates, self.heads, labels)

    def build_label_cache(self, label_token_ids: Sequence[Sequence[int]],
                          labels: LabelSet) -> LabelCache:
        if self.label_encoder is None:
            raise ConfigError("label caches exist only for the bi architecture")
        return label_cache_build(label_token_ids, labels, self.label_encoder,
                                 self.heads, self.reserved)

    def score_with_cache(self, text_ids: Sequence[int], cache: LabelCache,
                         candidates: CandidateSpanSet) -> ScoreGrid:
        if self.label_encoder is None:
            raise ConfigError("label caches exist only for the bi architecture")
        h_x = self.text_encoder.encode(list(text_ids))
        return label_cache_score(h_x, cache, candidates, self.heads, self.label_encoder)
