"""Decoding and the evaluation harness.

Decoding turns a score grid into predictions: keep (span, label) pairs whose
probability clears the threshold, then resolve token overlaps greedily by
confidence ("flat" output: no two accepted spans share a token).

Evaluation is exact-match: a prediction counts iff its (start, end, label)
triple equals a gold annotation of the same example. Counts are pooled
within a dataset across languages before computing precision and recall
(micro), and the overall figure is the unweighted mean over datasets of
those pooled F1s (macro).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .autodiff import Tensor, _sigmoid_values
from .data import GoldSpan, LabelSet
from .errors import ConfigError, DataError
from .heads import ScoreGrid
from .spans import CandidateSpanSet

OVERLAP_POLICIES = ("flat_greedy", "none")

# the standard sweep grid used when no thresholds are supplied
DEFAULT_THRESHOLDS = (0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class Prediction:
    start: int
    end: int
    label_index: int
    probability: float

    def triple(self) -> tuple[int, int, int]:
        return (self.start, self.end, self.label_index)


def spans_overlap(a_start: int, a_end: int, b_start: int, b_end: int) -> bool:
    """Inclusive token ranges sharing at least one token."""
    return a_start <= b_end and b_start <= a_end


def flat_greedy(predictions: Sequence[Prediction]) -> list[Prediction]:
    """Accept by descending probability; drop anything overlapping an
    accepted span. Ties break toward earlier start, then shorter span, then
    lower label index, so the result never depends on input order."""
    ranked = sorted(
        predictions,
        key=lambda p: (-p.probability, p.start, p.end - p.start, p.label_index),
    )
    accepted: list[Prediction] = []
    for p in ranked:
        if any(spans_overlap(p.start, p.end, q.start, q.end) for q in accepted):
            continue
        accepted.append(p)
    accepted.sort(key=lambda p: (p.start, p.end, p.label_index))
    return accepted


def decode(grid: ScoreGrid, threshold: float, overlap_policy: str = "flat_greedy",
           ) -> list[Prediction]:
    """Threshold the grid's probabilities and resolve overlaps.

    Masked-out candidates never decode. With policy "none" the surviving
    pairs are returned as-is (diagnostics); "flat_greedy" enforces a flat,
    overlap-free result.
    """
    if overlap_policy not in OVERLAP_POLICIES:
        raise ConfigError(f"overlap_policy: expected one of {OVERLAP_POLICIES}, got {overlap_policy!r}")
    if not (0.0 <= threshold <= 1.0):
        raise ConfigError(f"threshold: must lie in [0, 1], got {threshold}")
    probs = _sigmoid_values(grid.logits.data)
    survivors: list[Prediction] = []
    for k, (i, j) in enumerate(grid.candidates.spans):
        if not grid.candidates.mask[k]:
            continue
        for n in range(probs.shape[1]):
            if probs[k, n] > threshold:
                survivors.append(Prediction(i, j, n, float(probs[k, n])))
    if overlap_policy == "none":
        survivors.sort(key=lambda p: (p.start, p.end, p.label_index))
        return survivors
    return flat_greedy(survivors)


# ---------------------------------------------------------------------------
# exact-match scoring


class MicroF1(NamedTuple):
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def micro_f1(
    gold_by_example: Sequence[Sequence[GoldSpan]],
    pred_by_example: Sequence[Sequence[Prediction]],
) -> MicroF1:
    """Pool exact-match counts across aligned examples, then score once.

    Gold spans the model cannot represent (longer than the span cap) belong
    in the gold lists: they count as misses.
    """
    if len(gold_by_example) != len(pred_by_example):
        raise DataError(
            f"{len(gold_by_example)} gold lists vs {len(pred_by_example)} prediction lists")
    tp = fp = fn = 0
    for gold, preds in zip(gold_by_example, pred_by_example):
        gold_set = {(g.start, g.end, g.label_index) for g in gold}
        pred_set = {p.triple() for p in preds}
        if len(pred_set) != len(preds):
            raise DataError("duplicate prediction triples within one example")
        tp += len(gold_set & pred_set)
        fp += len(pred_set - gold_set)
        fn += len(gold_set - pred_set)
    p, r, f = _prf(tp, fp, fn)
    return MicroF1(p, r, f, tp, fp, fn)


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def scores(self) -> dict:
        p, r, f = _prf(self.tp, self.fp, self.fn)
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": p, "recall": r, "f1": f,
            "degenerate": (self.tp + self.fp + self.fn) == 0,
        }


def _tkey(t: float) -> str:
    return format(float(t), "g")


@dataclass
class EvalReport:
    """Counts per (dataset, language, threshold) plus derived aggregates."""

    counts: dict[tuple[str, str], dict[float, Counts]]
    thresholds: tuple[float, ...]
    dropped_gold: dict[tuple[str, str], int] = field(default_factory=dict)
    seed: int | None = None

    def datasets(self) -> list[str]:
        return sorted({ds for ds, _ in self.counts})

    def languages(self, dataset: str) -> list[str]:
        return sorted({lang for ds, lang in self.counts if ds == dataset})

    def dataset_counts(self, dataset: str, t: float) -> Counts:
        total = Counts()
        for (ds, _lang), per_t in self.counts.items():
            if ds == dataset:
                total = total + per_t[t]
        return total

    def dataset_micro_f1(self, dataset: str, t: float) -> float:
        return self.dataset_counts(dataset, t).scores()["f1"]

    def macro_f1(self, t: float) -> float:
        names = self.datasets()
        if not names:
            return 0.0
        return sum(self.dataset_micro_f1(ds, t) for ds in names) / len(names)

    def best_threshold_for(self, dataset: str, language: str) -> float:
        """Highest-F1 threshold for one language; ties pick the smaller t."""
        per_t = self.counts[(dataset, language)]
        best_t, best_f1 = None, -1.0
        for t in self.thresholds:
            f1 = per_t[t].scores()["f1"]
            if f1 > best_f1:
                best_t, best_f1 = t, f1
        return best_t

    def best_per_language_dataset_f1(self, dataset: str) -> float:
        """Pool each language's counts at its own best threshold."""
        total = Counts()
        for lang in self.languages(dataset):
            t = self.best_threshold_for(dataset, lang)
            total = total + self.counts[(dataset, lang)][t]
        return total.scores()["f1"]

    def best_per_language_macro_f1(self) -> float:
        names = self.datasets()
        if not names:
            return 0.0
        return sum(self.best_per_language_dataset_f1(ds) for ds in names) / len(names)

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        datasets: dict = {}
        for ds in self.datasets():
            languages: dict = {}
            for lang in self.languages(ds):
                per_t = self.counts[(ds, lang)]
                languages[lang] = {
                    "thresholds": {_tkey(t): per_t[t].scores() for t in self.thresholds},
                    "best_threshold": self.best_threshold_for(ds, lang),
                    "dropped_gold": self.dropped_gold.get((ds, lang), 0),
                }
            datasets[ds] = {
                "languages": languages,
                "micro_f1": {_tkey(t): self.dataset_micro_f1(ds, t) for t in self.thresholds},
                "best_per_language_micro_f1": self.best_per_language_dataset_f1(ds),
            }
        out = {
            "datasets": datasets,
            "macro_f1": {_tkey(t): self.macro_f1(t) for t in self.thresholds},
            "best_per_language_macro_f1": self.best_per_language_macro_f1(),
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def to_tsv_rows(self) -> list[dict]:
        """Long-format rows, one per (dataset, language, threshold)."""
        rows = []
        for ds in self.datasets():
            for lang in self.languages(ds):
                for t in self.thresholds:
                    s = self.counts[(ds, lang)][t].scores()
                    rows.append({"dataset": ds, "language": lang, "threshold": t, **s})
        return rows

    def to_tsv(self) -> str:
        cols = ["dataset", "language", "threshold", "tp", "fp", "fn",
                "precision", "recall", "f1", "degenerate"]
        lines = ["\t".join(cols)]
        for row in self.to_tsv_rows():
            lines.append("\t".join(_cell(row[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def render_table(self) -> str:
        """Plain-text summary: counts per (dataset, threshold), then a
        threshold-by-dataset pivot of micro F1 with the macro average."""
        lines = []
        header = f"{'dataset':<16}{'threshold':>10}{'tp':>7}{'fp':>7}{'fn':>7}" \
                 f"{'precision':>11}{'recall':>9}{'micro F1':>10}"
        lines.append(header)
        lines.append("-" * len(header))
        for ds in self.datasets():
            for t in self.thresholds:
                c = self.dataset_counts(ds, t)
                s = c.scores()
                lines.append(
                    f"{ds:<16}{_tkey(t):>10}{c.tp:>7}{c.fp:>7}{c.fn:>7}"
                    f"{s['precision']:>11.3f}{s['recall']:>9.3f}{s['f1']:>10.3f}")
        lines.append("")
        names = self.datasets()
        head2 = f"{'threshold':<12}" + "".join(f"{ds:>14}" for ds in names) + f"{'Avg':>10}"
        lines.append(head2)
        lines.append("-" * len(head2))
        for t in self.thresholds:
            row = f"{_tkey(t):<12}"
            row += "".join(f"{self.dataset_micro_f1(ds, t):>14.3f}" for ds in names)
            row += f"{self.macro_f1(t):>10.3f}"
            lines.append(row)
        row = f"{'best/lang':<12}"
        row += "".join(f"{self.best_per_language_dataset_f1(ds):>14.3f}" for ds in names)
        row += f"{self.best_per_language_macro_f1():>10.3f}"
        lines.append(row)
        return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, "g")
    return str(v)


def aggregate(
    pieces: Iterable[tuple[str, str, float, Counts]],
    thresholds: Sequence[float],
    dropped_gold: Mapping[tuple[str, str], int] | None = None,
    seed: int | None = None,
) -> EvalReport:
    """Pool (dataset, language, threshold, Counts) pieces into a report.

    Every (dataset, language) pair must provide counts for every threshold
    in the grid; a hole would silently skew the pooled numbers, so it is an
    error instead.
    """
    grid = tuple(float(t) for t in thresholds)
    if len(set(grid)) != len(grid) or not grid:
        raise ConfigError("thresholds: must be non-empty and duplicate-free")
    counts: dict[tuple[str, str], dict[float, Counts]] = {}
    for ds, lang, t, c in pieces:
        t = float(t)
        if t not in grid:
            raise ConfigError(f"threshold {t} not in the sweep grid {list(grid)}")
        per_t = counts.setdefault((ds, lang), {g: Counts() for g in grid})
        per_t[t] = per_t[t] + c
    return EvalReport(counts=counts, thresholds=grid,
                      dropped_gold=dict(dropped_gold or {}), seed=seed)


# ---------------------------------------------------------------------------
# sweeping cached scores


@dataclass
class ScoredExample:
    """One example's frozen scores: everything a sweep needs, no model."""

    dataset: str
    language: str
    candidates: CandidateSpanSet
    logits: np.ndarray  # [num_spans x num_labels]
    gold: tuple[GoldSpan, ...]
    dropped: int = 0  # unalignable entities; counted as misses


def sweep_scored(
    scored: Sequence[ScoredExample],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    overlap_policy: str = "flat_greedy",
    seed: int | None = None,
) -> EvalReport:
    """Decode each example at every threshold and pool counts.

    Scores are computed once by the caller; this function only re-decodes,
    which is what makes a 7-point sweep cost one scoring pass.
    """
    grid = tuple(float(t) for t in thresholds)
    pieces: list[tuple[str, str, float, Counts]] = []
    dropped_gold: dict[tuple[str, str], int] = {}
    for ex in scored:
        fake = ScoreGrid(logits=Tensor(ex.logits), candidates=ex.candidates,
                         labels=LabelSet([f"#{i}" for i in range(ex.logits.shape[1])]))
        key = (ex.dataset, ex.language)
        dropped_gold[key] = dropped_gold.get(key, 0) + ex.dropped
        for t in grid:
            preds = decode(fake, t, overlap_policy)
            m = micro_f1([list(ex.gold)], [preds])
            # unalignable gold can never be predicted: count as misses
            pieces.append((ex.dataset, ex.language, t,
                           Counts(m.tp, m.fp, m.fn + ex.dropped)))
    return aggregate(pieces, grid, dropped_gold=dropped_gold, seed=seed)
