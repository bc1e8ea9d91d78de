"""Candidate span enumeration, gold assignment, word-boundary masking, and
corpus statistics (positive-to-negative ratios, embedding coverage)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .data import GoldSpan, RawExample, SubwordTokenizer, TokenizedExample, remap_entities
from .errors import DataError


@dataclass(frozen=True)
class CandidateSpanSet:
    """All scored spans of one example, in canonical enumeration order.

    gold[i] is the set of label indices annotated on spans[i] (empty set for
    negatives). mask[i] is False when word-boundary masking excluded the span
    from the loss; masked spans are still scored. uncovered holds gold
    annotations longer than the length cap, which no candidate represents.
    """

    spans: tuple[tuple[int, int], ...]
    gold: tuple[frozenset[int], ...]
    mask: tuple[bool, ...]
    uncovered: tuple[GoldSpan, ...]
    n_tokens: int
    max_span_len: int

    def __len__(self) -> int:
        return len(self.spans)


def span_count(n_tokens: int, max_span_len: int) -> int:
    """Closed form: sum over starts i of min(max_span_len, n - i)."""
    return sum(min(max_span_len, n_tokens - i) for i in range(n_tokens))


def enumerate_spans(n_tokens: int, max_span_len: int) -> list[tuple[int, int]]:
    """Candidate (start, end) pairs, ends inclusive, start-major order."""
    if n_tokens < 0:
        raise DataError(f"token count must be non-negative, got {n_tokens}")
    if max_span_len <= 0:
        raise DataError(f"max_span_len must be positive, got {max_span_len}")
    out = []
    for i in range(n_tokens):
        for j in range(i, min(i + max_span_len, n_tokens)):
            out.append((i, j))
    return out


def assign_gold(
    spans: Sequence[tuple[int, int]],
    gold_spans: Sequence[GoldSpan],
    label_count: int,
) -> tuple[list[frozenset[int]], list[GoldSpan]]:
    """Attach gold label sets to candidates; returns (gold, uncovered).

    A gold annotation whose (start, end) is not among the candidates (it is
    longer than the cap) lands in `uncovered` instead of disappearing.
    """
    index = {span: k for k, span in enumerate(spans)}
    sets: list[set[int]] = [set() for _ in spans]
    uncovered: list[GoldSpan] = []
    for g in gold_spans:
        if not (0 <= g.label_index < label_count):
            raise DataError(
                f"gold label index {g.label_index} out of range for {label_count} labels")
        k = index.get((g.start, g.end))
        if k is None:
            uncovered.append(g)
        else:
            sets[k].add(g.label_index)
    return [frozenset(s) for s in sets], uncovered


def boundary_mask(
    spans: Sequence[tuple[int, int]],
    word_boundaries: Sequence[tuple[int, int]] | None,
    token_offsets: Sequence[tuple[int, int]],
) -> list[bool]:
    """True where the span's first token starts a word and its last ends one.

    Without boundaries the mask is all True (masking disabled).
    """
    if not word_boundaries:
        return [True] * len(spans)
    starts = {s for s, _ in word_boundaries}
    ends = {e for _, e in word_boundaries}
    out = []
    for i, j in spans:
        out.append(token_offsets[i][0] in starts and token_offsets[j][1] in ends)
    return out


def build_candidates(ex: TokenizedExample, max_span_len: int,
                     mask_word_boundaries: bool = False) -> CandidateSpanSet:
    """Compose enumeration, gold assignment and masking for one example."""
    spans = enumerate_spans(len(ex.tokens), max_span_len)
    gold, uncovered = assign_gold(spans, ex.gold_spans, len(ex.label_set))
    if mask_word_boundaries:
        mask = boundary_mask(spans, ex.word_boundaries, ex.token_offsets)
    else:
        mask = [True] * len(spans)
    return CandidateSpanSet(
        spans=tuple(spans),
        gold=tuple(gold),
        mask=tuple(mask),
        uncovered=tuple(uncovered),
        n_tokens=len(ex.tokens),
        max_span_len=max_span_len,
    )


# ---------------------------------------------------------------------------
# corpus statistics


@dataclass(frozen=True)
class RatioRow:
    language: str
    tokenizer: str
    masking: bool
    positives: int
    negatives: int

    @property
    def ratio(self) -> float | None:
        # None marks the degenerate no-negatives case; JSON has no inf
        if self.negatives == 0:
            return None
        return self.positives / self.negatives

    def to_json_dict(self) -> dict:
        return {
            "language": self.language,
            "tokenizer": self.tokenizer,
            "masking": self.masking,
            "positives": self.positives,
            "negatives": self.negatives,
            "ratio": self.ratio,
            "degenerate": self.negatives == 0,
        }


@dataclass(frozen=True)
class RatioReport:
    """Positive-to-negative candidate ratios per (language, tokenizer),
    with and without word-boundary masking.

    Counts are per span: each candidate contributes once, regardless of how
    many labels annotate it. (Counting (span, label) pairs would scale both
    sides by the label count and is not reported.)
    """

    rows: tuple[RatioRow, ...]

    def to_json_rows(self) -> list[dict]:
        return [r.to_json_dict() for r in self.rows]

    def find(self, language: str, tokenizer: str, masking: bool) -> RatioRow:
        for r in self.rows:
            if (r.language, r.tokenizer, r.masking) == (language, tokenizer, masking):
                return r
        raise KeyError((language, tokenizer, masking))


def ratio_report(
    corpus: Sequence[RawExample],
    tokenizers: Sequence[SubwordTokenizer],
    max_span_len: int,
    boundary_mode: str = "expand",
) -> RatioReport:
    """Count positive and negative candidates over a raw corpus.

    Every tokenizer is applied to every language present. Positives and
    negatives are counted over mask-true candidates, so the masked rows show
    exactly what a masked training run would see.
    """
    rows: list[RatioRow] = []
    languages = sorted({ex.language for ex in corpus})
    for tok in tokenizers:
        per_lang: dict[str, list[TokenizedExample]] = {lang: [] for lang in languages}
        for ex in corpus:
            per_lang[ex.language].append(remap_entities(ex, tok, boundary_mode))
        for lang in languages:
            for masking in (False, True):
                pos = neg = 0
                for tex in per_lang[lang]:
                    cand = build_candidates(tex, max_span_len, mask_word_boundaries=masking)
                    for gold, ok in zip(cand.gold, cand.mask):
                        if not ok:
                            continue
                        if gold:
                            pos += 1
                        else:
                            neg += 1
                rows.append(RatioRow(lang, tok.name, masking, pos, neg))
    return RatioReport(tuple(rows))


def gradient_coverage(corpus: Sequence[RawExample], tokenizer: SubwordTokenizer) -> float:
    """Fraction of the vocabulary that ever appears in the corpus.

    Embedding rows for unseen ids receive no gradient during training, so
    this is the fraction of the embedding table a run can actually move.
    """
    if tokenizer.vocabulary_size <= 0:
        raise DataError("tokenizer reports a non-positive vocabulary size")
    seen: set[int] = set()
    for ex in corpus:
        for t in tokenizer.tokenize(ex.text):
            seen.add(t.token_id)
    return len(seen) / tokenizer.vocabulary_size
