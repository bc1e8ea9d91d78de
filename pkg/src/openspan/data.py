"""Corpus ingest: JSONL records, subword tokenizers, char-to-token remapping.

Record schema, one JSON object per line:

    {"text": str,
     "entities": [{"start": int, "end": int, "label": str}, ...],
     "language": str,
     "word_boundaries": [[int, int], ...]}        # optional

Character offsets are half-open [start, end) over `text`. Entities may
overlap and may repeat a (start, end) pair with different labels; exact
duplicates are rejected. Everything here is deterministic: equal inputs give
bit-equal outputs.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .seeding import derive_rng


@dataclass(frozen=True)
class Entity:
    start: int
    end: int
    label: str


@dataclass(frozen=True)
class RawExample:
    text: str
    entities: tuple[Entity, ...]
    language: str
    word_boundaries: tuple[tuple[int, int], ...] | None = None


@dataclass(frozen=True)
class Token:
    token_id: int
    start: int
    end: int


@dataclass(frozen=True)
class GoldSpan:
    """Token-level gold annotation; start and end are inclusive indices."""
    start: int
    end: int
    label_index: int


@dataclass(frozen=True)
class DroppedEntity:
    entity: Entity
    reason: str  # "zero-token" | "boundary-mismatch"


class LabelSet:
    """Ordered, duplicate-free label descriptions with index lookup."""

    def __init__(self, labels: Iterable[str]):
        out: list[str] = []
        seen: set[str] = set()
        for lab in labels:
            if not isinstance(lab, str):
                raise DataError(f"label must be a string, got {type(lab).__name__}")
            if lab in seen:
                raise DataError(f"duplicate label description {lab!r}")
            seen.add(lab)
            out.append(lab)
        self.labels: tuple[str, ...] = tuple(out)
        self._index = {lab: i for i, lab in enumerate(out)}

    @classmethod
    def from_examples(cls, examples: Iterable[RawExample]) -> "LabelSet":
        """Union of labels in first-occurrence order."""
        out: list[str] = []
        seen: set[str] = set()
        for ex in examples:
            for ent in ex.entities:
                if ent.label not in seen:
                    seen.add(ent.label)
                    out.append(ent.label)
        return cls(out)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise DataError(f"label {label!r} not in label set") from None

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.labels == other.labels

    def __repr__(self) -> str:
        return f"LabelSet({list(self.labels)!r})"


@dataclass(frozen=True)
class TokenizedExample:
    tokens: tuple[Token, ...]
    gold_spans: tuple[GoldSpan, ...]
    dropped_entities: tuple[DroppedEntity, ...]
    label_set: LabelSet
    language: str
    text: str
    word_boundaries: tuple[tuple[int, int], ...] | None = None

    @property
    def token_ids(self) -> list[int]:
        return [t.token_id for t in self.tokens]

    @property
    def token_offsets(self) -> list[tuple[int, int]]:
        return [(t.start, t.end) for t in self.tokens]


# ---------------------------------------------------------------------------
# tokenizers


def _hash_token_id(token_text: str, vocab_size: int) -> int:
    digest = hashlib.blake2b(token_text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab_size


class SubwordTokenizer:
    """Deterministic text -> offset-carrying tokens.

    Token ids come from a stable hash into a fixed-size vocabulary, so no
    fitting pass is needed and equal text always produces equal ids.
    """

    name: str = "base"

    def __init__(self, vocab_size: int = 2048):
        if vocab_size <= 0:
            raise DataError(f"vocab_size must be positive, got {vocab_size}")
        self.vocabulary_size = int(vocab_size)

    def _extents(self, text: str) -> list[tuple[int, int]]:
        raise NotImplementedError

    def tokenize(self, text: str) -> list[Token]:
        tokens = []
        for s, e in self._extents(text):
            tokens.append(Token(_hash_token_id(text[s:e], self.vocabulary_size), s, e))
        return tokens


class WhitespaceTokenizer(SubwordTokenizer):
    """One token per maximal non-whitespace run."""

    name = "whitespace"

    def _extents(self, text: str) -> list[tuple[int, int]]:
        return [(m.start(), m.end()) for m in re.finditer(r"\S+", text)]


class CharNgramTokenizer(SubwordTokenizer):
    """Fixed-width character chunks; emulates scripts without separators.

    The text is cut into consecutive n-char pieces verbatim (whitespace
    included); a shorter remainder becomes the final token.
    """

    def __init__(self, n: int, vocab_size: int = 2048):
        super().__init__(vocab_size)
        if n <= 0:
            raise DataError(f"char n-gram width must be positive, got {n}")
        self.n = int(n)
        self.name = f"char_ngram:{n}"

    def _extents(self, text: str) -> list[tuple[int, int]]:
        return [(i, min(i + self.n, len(text))) for i in range(0, len(text), self.n)]


class ProvidedOffsetsTokenizer(SubwordTokenizer):
    """Tokenizes by offsets supplied with the data itself.

    Each text must be registered (typically with its word_boundaries) before
    tokenize() sees it; unknown text is an error rather than a guess.
    """

    name = "external"

    def __init__(self, vocab_size: int = 2048):
        super().__init__(vocab_size)
        self._offsets: dict[str, tuple[tuple[int, int], ...]] = {}

    def register(self, text: str, extents: Sequence[tuple[int, int]]) -> None:
        for s, e in extents:
            if not (0 <= s < e <= len(text)):
                raise DataError(f"offset ({s}, {e}) out of range for text of length {len(text)}")
        self._offsets[text] = tuple((int(s), int(e)) for s, e in extents)

    def register_corpus(self, examples: Iterable[RawExample]) -> None:
        for ex in examples:
            if ex.word_boundaries is None:
                raise DataError("external-offsets tokenizer needs word_boundaries on every example")
            self.register(ex.text, ex.word_boundaries)

    def _extents(self, text: str) -> list[tuple[int, int]]:
        if text not in self._offsets:
            raise DataError("no registered offsets for this text")
        return list(self._offsets[text])


def build_tokenizer(spec: str, vocab_size: int = 2048) -> SubwordTokenizer:
    """Parse a tokenizer spec string: whitespace | char_ngram:<n> | external."""
    if spec == "whitespace":
        return WhitespaceTokenizer(vocab_size)
    if spec.startswith("char_ngram"):
        parts = spec.split(":")
        if len(parts) != 2 or not parts[1].isdigit():
            raise DataError(f"tokenizer: expected char_ngram:<n>, got {spec!r}")
        return CharNgramTokenizer(int(parts[1]), vocab_size)
    if spec == "external":
        return ProvidedOffsetsTokenizer(vocab_size)
    raise DataError(f"tokenizer: unknown spec {spec!r}")


# ---------------------------------------------------------------------------
# loading


def _parse_record(obj: dict, path: str, line: int) -> RawExample:
    if not isinstance(obj, dict):
        raise DataError("record is not a JSON object", path=path, line=line)
    for field_name in ("text", "entities", "language"):
        if field_name not in obj:
            raise DataError(f"missing required field {field_name!r}", path=path, line=line)
    text = obj["text"]
    if not isinstance(text, str):
        raise DataError("field 'text' must be a string", path=path, line=line)
    if not isinstance(obj["language"], str) or not obj["language"]:
        raise DataError("field 'language' must be a non-empty string", path=path, line=line)
    if not isinstance(obj["entities"], list):
        raise DataError("field 'entities' must be a list", path=path, line=line)

    entities = []
    seen: set[tuple[int, int, str]] = set()
    for k, ent in enumerate(obj["entities"]):
        if not isinstance(ent, dict) or not {"start", "end", "label"} <= set(ent):
            raise DataError(f"entity {k} needs start, end and label", path=path, line=line)
        s, e, lab = ent["start"], ent["end"], ent["label"]
        if not isinstance(s, int) or not isinstance(e, int) or isinstance(s, bool) or isinstance(e, bool):
            raise DataError(f"entity {k}: offsets must be integers", path=path, line=line)
        if not isinstance(lab, str) or not lab:
            raise DataError(f"entity {k}: label must be a non-empty string", path=path, line=line)
        if not (0 <= s < e <= len(text)):
            raise DataError(
                f"entity {k}: offsets ({s}, {e}) invalid for text of length {len(text)}",
                path=path, line=line)
        key = (s, e, lab)
        if key in seen:
            raise DataError(f"entity {k}: duplicate of ({s}, {e}, {lab!r})", path=path, line=line)
        seen.add(key)
        entities.append(Entity(s, e, lab))

    boundaries = None
    if "word_boundaries" in obj and obj["word_boundaries"] is not None:
        wb = obj["word_boundaries"]
        if not isinstance(wb, list):
            raise DataError("field 'word_boundaries' must be a list", path=path, line=line)
        parsed = []
        for k, pair in enumerate(wb):
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in pair)):
                raise DataError(f"word boundary {k} must be [start, end]", path=path, line=line)
            s, e = pair
            if not (0 <= s < e <= len(text)):
                raise DataError(
                    f"word boundary {k}: offsets ({s}, {e}) invalid for text of length {len(text)}",
                    path=path, line=line)
            parsed.append((s, e))
        boundaries = tuple(parsed)

    return RawExample(text=text, entities=tuple(entities), language=obj["language"],
                      word_boundaries=boundaries)


def load_jsonl(path: str | Path, cap: int | None = None, *,
               sample: bool = False, seed: int = 0) -> list[RawExample]:
    """Read a JSONL corpus file, validating every record it returns.

    With a cap, the default takes the first `cap` records in file order and
    stops reading there. `sample=True` instead reads the whole file and keeps
    a seeded uniform sample of `cap` records, still in file order.
    """
    path = Path(path)
    if cap is not None and cap <= 0:
        raise DataError(f"cap must be positive, got {cap}", path=str(path))
    examples: list[RawExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed JSON ({exc.msg})", path=str(path), line=line_no) from None
            examples.append(_parse_record(obj, str(path), line_no))
            if cap is not None and not sample and len(examples) >= cap:
                break
    if cap is not None and sample and len(examples) > cap:
        rng = derive_rng(seed, "load-sample", str(path.name))
        keep = sorted(rng.choice(len(examples), size=cap, replace=False).tolist())
        examples = [examples[i] for i in keep]
    return examples


# ---------------------------------------------------------------------------
# char-span to token-span remapping


def _align_entity(entity: Entity, tokens: Sequence[Token], boundary_mode: str
                  ) -> GoldSpan | DroppedEntity:
    overlapping = [i for i, t in enumerate(tokens)
                   if t.start < entity.end and entity.start < t.end]
    if not overlapping:
        return DroppedEntity(entity, "zero-token")
    first, last = overlapping[0], overlapping[-1]
    if boundary_mode == "exact":
        if tokens[first].start != entity.start or tokens[last].end != entity.end:
            return DroppedEntity(entity, "boundary-mismatch")
    return GoldSpan(first, last, -1)  # label_index filled by the caller


def remap_entities(ex: RawExample, tokenizer: SubwordTokenizer,
                   boundary_mode: str = "expand",
                   label_set: LabelSet | None = None) -> TokenizedExample:
    """Tokenize and convert char-offset entities to inclusive token spans.

    `expand` keeps any entity that overlaps at least one token, widening it
    to the smallest covering token range. `exact` additionally requires the
    entity's char extent to coincide with token boundaries. Every input
    entity ends up either in gold_spans or in dropped_entities with a reason;
    nothing is lost silently.

    The label set defaults to this example's own labels; pass the dataset
    union when examples must share indices.
    """
    if boundary_mode not in ("expand", "exact"):
        raise DataError(f"boundary_mode must be 'expand' or 'exact', got {boundary_mode!r}")
    tokens = tuple(tokenizer.tokenize(ex.text))
    if label_set is None:
        label_set = LabelSet.from_examples([ex])
    gold: list[GoldSpan] = []
    dropped: list[DroppedEntity] = []
    for ent in ex.entities:
        got = _align_entity(ent, tokens, boundary_mode)
        if isinstance(got, DroppedEntity):
            dropped.append(got)
        else:
            gold.append(GoldSpan(got.start, got.end, label_set.index(ent.label)))
    assert len(ex.entities) == len(gold) + len(dropped)
    return TokenizedExample(
        tokens=tokens,
        gold_spans=tuple(gold),
        dropped_entities=tuple(dropped),
        label_set=label_set,
        language=ex.language,
        text=ex.text,
        word_boundaries=ex.word_boundaries,
    )
