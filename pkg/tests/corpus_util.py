"""Synthetic bilingual corpus for end-to-end tests.

Two invented languages share one open label space of five free-text
descriptions. lang1 is space-separated, so a whitespace tokenizer yields one
token per word. lang2 concatenates 4-character words with no separator and
ships word_boundaries, so a 2-character-chunk tokenizer splits every word
into exactly two tokens whose extents line up with the word grid.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from openspan.data import (
    Entity,
    LabelSet,
    RawExample,
    SubwordTokenizer,
    TokenizedExample,
    remap_entities,
)
from openspan.seeding import derive_rng

LABELS = ("person name", "named place", "animal species", "color word", "hand tool")

LANG1_WORDS = {
    "person name": ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "henry"],
    "named place": ["paris", "tokyo", "cairo", "oslo", "lima", "quito", "dakar", "hanoi"],
    "animal species": ["ferret", "heron", "otter", "lynx", "toad", "crane", "shrew", "marmot"],
    "color word": ["crimson", "teal", "ochre", "violet", "amber", "beige", "coral", "sage"],
    "hand tool": ["hammer", "chisel", "wrench", "pliers", "rasp", "spade", "clamp", "anvil"],
}
LANG1_FILLERS = ["the", "saw", "near", "with", "a", "old", "small",
                 "walked", "yesterday", "sat", "under", "lamp", "found"]

# every lang2 word is exactly 4 characters
LANG2_WORDS = {
    "person name": ["akio", "buna", "ceki", "dila", "enzo", "fuyu", "goro", "hana"],
    "named place": ["kyot", "osak", "nara", "kobe", "gifu", "aomo", "toya", "hima"],
    "animal species": ["neko", "tori", "kuma", "saru", "tako", "ushi", "wani", "kame"],
    "color word": ["rojo", "azul", "verd", "gris", "rosa", "kuro", "shir", "akai"],
    "hand tool": ["mazo", "sier", "pala", "taza", "lave", "kugi", "nomi", "yato"],
}
LANG2_FILLERS = ["toko", "miru", "yoru", "kawa", "deso", "naku", "suki", "hosu"]

# slot sequences; strings are literal fillers, integers index into LABELS
LANG1_TEMPLATES = [
    ["the", 0, "saw", "a", 2, "near", 1],
    [0, "walked", "with", "a", 3, 4, "yesterday"],
    ["a", 2, "sat", "under", "the", 3, "lamp"],
    [0, "found", "the", 4, "near", 1],
    ["the", 3, 2, "saw", 0],
]
LANG2_TEMPLATES = [
    ["toko", 0, "miru", 2, "kawa", 1],
    [0, "yoru", 3, 4, "deso"],
    ["naku", 2, "suki", 3, "hosu"],
    [0, "kawa", 4, "miru", 1],
    [3, 2, "toko", 0],
]


def _build_example(template: Sequence, words: dict, fillers: list[str],
                   language: str, joiner: str, rng) -> RawExample:
    parts: list[str] = []
    kinds: list[str | None] = []
    for slot in template:
        if isinstance(slot, int):
            label = LABELS[slot]
            parts.append(words[label][rng.integers(len(words[label]))])
            kinds.append(label)
        else:
            parts.append(slot)
            kinds.append(None)
    text = joiner.join(parts)
    entities = []
    boundaries = []
    pos = 0
    for part, kind in zip(parts, kinds):
        start, end = pos, pos + len(part)
        boundaries.append((start, end))
        if kind is not None:
            entities.append(Entity(start, end, kind))
        pos = end + len(joiner)
    return RawExample(text=text, entities=tuple(entities), language=language,
                      word_boundaries=tuple(boundaries))


def make_lang1(n: int, seed: int = 0) -> list[RawExample]:
    rng = derive_rng(seed, "corpus-lang1")
    return [_build_example(LANG1_TEMPLATES[rng.integers(len(LANG1_TEMPLATES))],
                           LANG1_WORDS, LANG1_FILLERS, "lang1", " ", rng)
            for _ in range(n)]


def make_lang2(n: int, seed: int = 0) -> list[RawExample]:
    rng = derive_rng(seed, "corpus-lang2")
    return [_build_example(LANG2_TEMPLATES[rng.integers(len(LANG2_TEMPLATES))],
                           LANG2_WORDS, LANG2_FILLERS, "lang2", "", rng)
            for _ in range(n)]


def shared_label_set() -> LabelSet:
    return LabelSet(LABELS)


def tokenize_corpus(raws: Sequence[RawExample], tokenizer: SubwordTokenizer,
                    label_set: LabelSet | None = None) -> list[TokenizedExample]:
    label_set = label_set or shared_label_set()
    return [remap_entities(ex, tokenizer, "expand", label_set=label_set) for ex in raws]


def write_jsonl(path: str | Path, raws: Sequence[RawExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in raws:
            fh.write(json.dumps({
                "text": ex.text,
                "entities": [{"start": e.start, "end": e.end, "label": e.label}
                             for e in ex.entities],
                "language": ex.language,
                "word_boundaries": [list(b) for b in ex.word_boundaries],
            }) + "\n")
