"""Acceptance suite: one test per numbered criterion.

Every expected value comes from an independent oracle computed inside this
module (scalar loops, closed forms, brute-force search, hand-pooled counts),
never from the code under test. Tolerances are pinned in the asserts, and
conftest.py prints one PASS/FAIL line per criterion after the run.
"""

import dataclasses
import time

import numpy as np
import pytest

from openspan.autodiff import Tensor
from openspan.data import (
    CharNgramTokenizer,
    Entity,
    GoldSpan,
    LabelSet,
    RawExample,
    WhitespaceTokenizer,
    remap_entities,
)
from openspan.errors import SequenceOverflowError
from openspan.evaluation import (
    DEFAULT_THRESHOLDS,
    Prediction,
    ScoredExample,
    decode,
    flat_greedy,
    micro_f1,
    sweep_scored,
)
from openspan.heads import HeadParams, ModelConfig, ScoreGrid, SpanModel, span_logits
from openspan.losses import LossConfig, compute_loss
from openspan.serialization import load_checkpoint, save_checkpoint
from openspan.spans import CandidateSpanSet, enumerate_spans, ratio_report
from openspan.training import TrainConfig, evaluate_model, train

from corpus_util import make_lang1, make_lang2, tokenize_corpus
from gradcheck import check_gradients


def _plain_candidates(n_tokens, max_span_len):
    spans = tuple(enumerate_spans(n_tokens, max_span_len))
    return CandidateSpanSet(spans=spans,
                            gold=tuple(frozenset() for _ in spans),
                            mask=tuple(True for _ in spans),
                            uncovered=(), n_tokens=n_tokens,
                            max_span_len=max_span_len)


def _random_candidates(rng, n_tokens, max_span_len, n_labels):
    """Random gold sets and masking, pinned so that at least one gold pair
    and at least one mask-true negative always exist."""
    spans = list(enumerate_spans(n_tokens, max_span_len))
    gold = [frozenset(n for n in range(n_labels) if rng.random() < 0.3)
            for _ in spans]
    mask = [bool(rng.random() < 0.8) for _ in spans]
    gold[0], mask[0] = frozenset({0}), True
    if len(spans) > 1:
        gold[-1], mask[-1] = frozenset(), True
    return CandidateSpanSet(spans=tuple(spans), gold=tuple(gold),
                            mask=tuple(mask), uncovered=(),
                            n_tokens=n_tokens, max_span_len=max_span_len)


def _kinds(n):
    return LabelSet([f"kind {k}" for k in range(n)])


# ---------------------------------------------------------------------------
# 1. end-to-end gradients vs central finite differences


def test_criterion_01_gradient_integrity():
    started = time.monotonic()
    combos = [(arch, kind) for arch in ("bi", "cross")
              for kind in ("bce", "bce_pos_weight", "focal", "contrastive")]
    checked = 0
    for idx, (arch, kind) in enumerate(combos):
        for rep in range(3):
            rng = np.random.default_rng(1000 + 10 * idx + rep)
            model = SpanModel(ModelConfig(
                architecture=arch, base_vocab_size=24, d_model=6, d_mlp=5,
                d_width=3, max_span_len=3, max_seq_len=24,
                seed=int(rng.integers(1 << 16))))
            n = int(rng.integers(2, 9))        # up to 8 tokens
            m = int(rng.integers(1, 5))        # up to 4 labels
            text_ids = [int(i) for i in rng.integers(0, 24, size=n)]
            label_ids = [[int(i) for i in
                          rng.integers(0, 24, size=int(rng.integers(1, 3)))]
                         for _ in range(m)]
            cands = _random_candidates(rng, n, 3, m)
            cfg = LossConfig(kind=kind, pos_weight=2.0, alpha=0.25, gamma=2.0)

            def loss_fn():
                grid = model.score(text_ids, label_ids, cands, _kinds(m))
                return compute_loss(grid, cfg, model.heads.threshold_logit)

            worst = check_gradients(loss_fn, model.parameters(), rel_tol=1e-4)
            assert worst < 1e-4
            checked += 1
    assert checked >= 20
    assert time.monotonic() - started < 60.0


# ---------------------------------------------------------------------------
# 2. span scoring vs a scalar-loop oracle


def _scalar_mlp(row, mlp):
    w1, b1, w2, b2 = mlp.w1.data, mlp.b1.data, mlp.w2.data, mlp.b2.data
    hidden = []
    for j in range(w1.shape[1]):
        acc = float(b1[j])
        for i in range(w1.shape[0]):
            acc += float(row[i]) * float(w1[i, j])
        if mlp.activation == "relu" and acc < 0.0:
            acc = 0.0
        hidden.append(acc)
    out = []
    for k in range(w2.shape[1]):
        acc = float(b2[k])
        for j in range(w2.shape[0]):
            acc += hidden[j] * float(w2[j, k])
        out.append(acc)
    return out


def _scalar_grid(h_x, h_y, cands, heads):
    q = [_scalar_mlp(h_y[n], heads.label_mlp) for n in range(h_y.shape[0])]
    out = np.zeros((len(cands.spans), len(q)))
    for kidx, (i, j) in enumerate(cands.spans):
        s = _scalar_mlp(h_x[i], heads.start_mlp)
        e = _scalar_mlp(h_x[j], heads.end_mlp)
        feats = s + e + [float(v) for v in heads.width_emb.data[j - i]]
        k_vec = _scalar_mlp(feats, heads.span_mlp)
        for n in range(len(q)):
            out[kidx, n] = sum(k_vec[d] * q[n][d] for d in range(len(k_vec)))
    return out


def test_criterion_02_span_scoring_scalar_oracle():
    for inst in range(100):
        rng = np.random.default_rng(2000 + inst)
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 4))
        cap = int(rng.integers(1, 5))
        heads = HeadParams(ModelConfig(
            architecture="bi", base_vocab_size=8, d_model=5, d_mlp=4,
            d_width=3, max_span_len=cap, max_seq_len=16, seed=inst))
        h_x = rng.normal(size=(n, 5))
        h_y = rng.normal(size=(m, 5))
        cands = _plain_candidates(n, cap)
        grid = span_logits(Tensor(h_x), Tensor(h_y), cands, heads, _kinds(m))
        expected = _scalar_grid(h_x, h_y, cands, heads)
        assert np.max(np.abs(grid.logits.data - expected)) <= 1e-10


# ---------------------------------------------------------------------------
# 3. loss identities


def test_criterion_03_loss_identities():
    for inst in range(20):
        rng = np.random.default_rng(3000 + inst)
        m = int(rng.integers(1, 4))
        cands = _random_candidates(rng, int(rng.integers(2, 6)), 3, m)
        grid = ScoreGrid(
            logits=Tensor(rng.normal(scale=3.0, size=(len(cands.spans), m))),
            candidates=cands, labels=_kinds(m))
        bce = compute_loss(grid, LossConfig(kind="bce")).item()
        flat_focal = compute_loss(
            grid, LossConfig(kind="focal", alpha=0.5, gamma=0.0)).item()
        assert abs(flat_focal - 0.5 * bce) <= 1e-10
        unweighted = compute_loss(
            grid, LossConfig(kind="bce_pos_weight", pos_weight=1.0)).item()
        assert abs(unweighted - bce) <= 1e-10

    # a gold pair with no negatives competes against nothing: typing term 0
    for n_spans in (1, 3):
        spans = tuple((i, i) for i in range(n_spans))
        cands = CandidateSpanSet(
            spans=spans, gold=tuple(frozenset({0}) for _ in spans),
            mask=tuple(True for _ in spans), uncovered=(),
            n_tokens=n_spans, max_span_len=1)
        grid = ScoreGrid(
            logits=Tensor(np.random.default_rng(7).normal(size=(n_spans, 1))),
            candidates=cands, labels=_kinds(1))
        cfg = LossConfig(kind="contrastive", typing_weight=1.0,
                         threshold_weight=0.0)
        assert compute_loss(grid, cfg, Tensor(0.0)).item() == 0.0


# ---------------------------------------------------------------------------
# 4. enumeration closed form and remapping vs brute force


def test_criterion_04_enumeration_and_remap_oracles():
    # m = min(cap, n) usable widths leave n*m - m*(m-1)/2 candidate spans
    for n in range(0, 65):
        for cap in range(1, 33):
            m = min(cap, n)
            expected = n * m - (m * (m - 1)) // 2
            spans = enumerate_spans(n, cap)
            assert len(spans) == expected
            assert len(set(spans)) == expected

    rng = np.random.default_rng(4000)
    tokenizers = [WhitespaceTokenizer(64), CharNgramTokenizer(2, 64),
                  CharNgramTokenizer(3, 64)]
    for _ in range(1000):
        words = ["".join(chr(97 + c) for c in rng.integers(0, 26, size=rng.integers(1, 6)))
                 for _ in range(int(rng.integers(1, 7)))]
        text = " ".join(words)
        ents = []
        for _ in range(int(rng.integers(1, 5))):
            a = int(rng.integers(0, len(text)))
            b = int(rng.integers(a + 1, len(text) + 1))
            ents.append(Entity(a, b, f"kind {int(rng.integers(0, 2))}"))
        raw = RawExample(text=text, entities=tuple(ents), language="lang1")
        tok = tokenizers[int(rng.integers(0, len(tokenizers)))]
        mode = "exact" if rng.random() < 0.5 else "expand"
        got = remap_entities(raw, tok, mode)

        # oracle: intersect char intervals, then apply the mode's rule
        offsets = [(t.start, t.end) for t in tok.tokenize(text)]
        label_order: list[str] = []
        for e in ents:
            if e.label not in label_order:
                label_order.append(e.label)
        want_gold, want_drop = [], []
        for e in ents:
            hit = [i for i, (ts, te) in enumerate(offsets)
                   if ts < e.end and e.start < te]
            if not hit:
                want_drop.append((e, "zero-token"))
            elif mode == "exact" and (offsets[hit[0]][0] != e.start
                                      or offsets[hit[-1]][1] != e.end):
                want_drop.append((e, "boundary-mismatch"))
            else:
                want_gold.append((hit[0], hit[-1], label_order.index(e.label)))
        assert [(g.start, g.end, g.label_index) for g in got.gold_spans] == want_gold
        assert [(d.entity, d.reason) for d in got.dropped_entities] == want_drop


# ---------------------------------------------------------------------------
# 5. micro-F1 vs brute-force set intersection; pooled-count aggregation


def _scored_single_label(dataset, lang, gold_on, pred_on):
    # two disjoint single-token spans; saturated logits hold the same
    # prediction set at every grid threshold
    spans = ((0, 0), (1, 1))
    cands = CandidateSpanSet(
        spans=spans,
        gold=tuple(frozenset({0}) if i in gold_on else frozenset() for i in (0, 1)),
        mask=(True, True), uncovered=(), n_tokens=2, max_span_len=1)
    logits = np.array([[8.0 if 0 in pred_on else -8.0],
                       [8.0 if 1 in pred_on else -8.0]])
    return ScoredExample(dataset, lang, cands, logits,
                         gold=tuple(GoldSpan(i, i, 0) for i in sorted(gold_on)))


def test_criterion_05_micro_f1_oracle():
    # exhaustive over every (gold, predicted) subset pair of 6 disjoint spans
    universe = [(i, i) for i in range(6)]
    for gbits in range(64):
        for pbits in range(64):
            gold = [GoldSpan(s, e, 0)
                    for k, (s, e) in enumerate(universe) if gbits >> k & 1]
            preds = [Prediction(s, e, 0, 0.9)
                     for k, (s, e) in enumerate(universe) if pbits >> k & 1]
            got = micro_f1([gold], [preds])
            gset = {(g.start, g.end, 0) for g in gold}
            pset = {(p.start, p.end, 0) for p in preds}
            tp, fp, fn = (len(gset & pset), len(pset - gset), len(gset - pset))
            assert (got.tp, got.fp, got.fn) == (tp, fp, fn)
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            want = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
            assert abs(got.f1 - want) <= 1e-12

    # hand-pooled counts: 10-example dataset vs 1-example dataset
    scored = [_scored_single_label("big", "lang1", {0}, {0}) for _ in range(9)]
    scored.append(_scored_single_label("big", "lang1", {0}, {1}))  # fp + fn
    scored.append(_scored_single_label("small", "lang1", {0}, set()))  # fn
    report = sweep_scored(scored, thresholds=(0.5,))
    assert report.dataset_micro_f1("big", 0.5) == pytest.approx(0.9, abs=1e-12)
    assert report.dataset_micro_f1("small", 0.5) == 0.0
    assert report.macro_f1(0.5) == pytest.approx(0.45, abs=1e-12)
    pooled = (report.dataset_counts("big", 0.5)
              + report.dataset_counts("small", 0.5)).scores()
    assert (pooled["tp"], pooled["fp"], pooled["fn"]) == (9, 1, 2)
    # pooling favours the large split: 6/7 here, far from the 0.45 mean
    assert pooled["f1"] == pytest.approx(6 / 7, abs=1e-12)
    assert abs(pooled["f1"] - report.macro_f1(0.5)) > 0.1


# ---------------------------------------------------------------------------
# 6. threshold decoding


def test_criterion_06_threshold_decoding():
    rng = np.random.default_rng(6000)

    # survivor sets only shrink as the threshold rises across the grid
    for _ in range(20):
        m = int(rng.integers(1, 4))
        cands = _random_candidates(rng, int(rng.integers(2, 7)), 3, m)
        grid = ScoreGrid(
            logits=Tensor(rng.normal(scale=2.0, size=(len(cands.spans), m))),
            candidates=cands, labels=_kinds(m))
        survivors = [{p.triple() for p in decode(grid, t, "none")}
                     for t in DEFAULT_THRESHOLDS]
        for wider, narrower in zip(survivors, survivors[1:]):
            assert narrower <= wider

    # flat_greedy equals an independent pick-the-best loop and never overlaps
    prob_pool = (0.2, 0.4, 0.6, 0.6, 0.8, 0.95)  # duplicates force tie-breaks
    for _ in range(200):
        preds, seen = [], set()
        for _ in range(int(rng.integers(0, 11))):
            i = int(rng.integers(0, 6))
            j = int(rng.integers(i, min(i + 3, 6)))
            lab = int(rng.integers(0, 3))
            if (i, j, lab) in seen:
                continue
            seen.add((i, j, lab))
            preds.append(Prediction(i, j, lab,
                                    float(prob_pool[int(rng.integers(0, 6))])))
        got = flat_greedy(preds)
        for x in got:
            for y in got:
                if x is not y:
                    assert x.end < y.start or y.end < x.start
        remaining, want = list(preds), []
        while remaining:
            best = remaining[0]
            for p in remaining[1:]:
                if (-p.probability, p.start, p.end - p.start, p.label_index) < \
                   (-best.probability, best.start, best.end - best.start,
                        best.label_index):
                    best = p
            want.append(best)
            remaining = [p for p in remaining
                         if p is not best and (p.end < best.start or best.end < p.start)]
        want.sort(key=lambda p: (p.start, p.end, p.label_index))
        assert got == want

    # sweeping frozen scores equals re-scoring from scratch per threshold
    ws = WhitespaceTokenizer(64)
    model = SpanModel(ModelConfig(architecture="bi", base_vocab_size=64,
                                  d_model=8, d_mlp=6, d_width=3, max_span_len=3,
                                  max_seq_len=32, seed=5))
    corpus = {"synth-lang1": tokenize_corpus(make_lang1(6, seed=21), ws)}
    frozen = evaluate_model(model, corpus, ws)
    for t in DEFAULT_THRESHOLDS:
        fresh = evaluate_model(model, corpus, ws, thresholds=(t,))
        assert fresh.dataset_counts("synth-lang1", t) == \
            frozen.dataset_counts("synth-lang1", t)


# ---------------------------------------------------------------------------
# 7. text-tower invariance and label-cache equivalence


def test_criterion_07_text_tower_invariance_and_cache():
    rng = np.random.default_rng(7000)
    model = SpanModel(ModelConfig(architecture="bi", base_vocab_size=32,
                                  d_model=8, d_mlp=6, d_width=4, max_span_len=4,
                                  max_seq_len=16, seed=9))
    text = [int(i) for i in rng.integers(0, 32, size=7)]
    ids = [[1, 2], [3], [4, 5, 6]]
    labels = _kinds(3)

    h_base = model.encode(text, ids)[0].data
    permuted = [ids[2], ids[0], ids[1]]
    extended = ids + [[7, 8]]
    assert np.array_equal(model.encode(text, permuted)[0].data, h_base)
    assert np.array_equal(model.encode(text, extended)[0].data, h_base)

    cands = _plain_candidates(7, 4)
    direct = model.score(text, ids, cands, labels).logits.data
    cache = model.build_label_cache(ids, labels)
    cached = model.score_with_cache(text, cache, cands).logits.data
    assert np.array_equal(direct, cached)


# ---------------------------------------------------------------------------
# 8 and 9 share two small trained models


OVERFIT_STEPS = 500


@pytest.fixture(scope="session")
def overfit_runs():
    ws = WhitespaceTokenizer(4096)
    chunks = CharNgramTokenizer(2, 4096)
    train_ex = (tokenize_corpus(make_lang1(25, seed=11), ws)
                + tokenize_corpus(make_lang2(25, seed=11), chunks))
    runs = {}
    for arch in ("bi", "cross"):
        config = TrainConfig(
            architecture=arch, seed=3, d_model=32, d_mlp=64, d_width=8,
            max_span_len=3, max_seq_len=64, batch_size=12,
            max_steps=OVERFIT_STEPS, lr=5e-3, loss=LossConfig(kind="bce"),
            eval_every=10 ** 6, early_stopping=False)
        started = time.monotonic()
        result = train(config, train_ex, None, ws)
        elapsed = time.monotonic() - started
        report = evaluate_model(result.model, {"train": train_ex}, ws)
        best = max(report.dataset_micro_f1("train", t)
                   for t in DEFAULT_THRESHOLDS)
        runs[arch] = (result.model, best, elapsed)
    return runs


def test_criterion_08_overfit_tiny_corpus(overfit_runs):
    for arch in ("bi", "cross"):
        _, best_f1, elapsed = overfit_runs[arch]
        assert best_f1 >= 0.95, f"{arch}: train micro-F1 {best_f1:.4f}"
        assert elapsed < 300.0, f"{arch}: took {elapsed:.1f}s"


def test_criterion_09_per_language_threshold_choice(overfit_runs):
    ws = WhitespaceTokenizer(4096)
    chunks = CharNgramTokenizer(2, 4096)
    corpus = {
        "synth-lang1": tokenize_corpus(make_lang1(20, seed=12), ws),
        "synth-lang2": tokenize_corpus(make_lang2(20, seed=12), chunks),
    }
    for arch in ("bi", "cross"):
        report = evaluate_model(overfit_runs[arch][0], corpus, ws)
        fixed_best = max(report.macro_f1(t) for t in DEFAULT_THRESHOLDS)
        assert report.best_per_language_macro_f1() >= fixed_best - 1e-12


# ---------------------------------------------------------------------------
# 10. word-boundary masking raises the positive-to-negative ratio


def test_criterion_10_boundary_masking_raises_ratio():
    corpus = make_lang1(25, seed=11) + make_lang2(25, seed=11)
    report = ratio_report(
        corpus, [WhitespaceTokenizer(4096), CharNgramTokenizer(2, 4096)], 5)
    # the chunking tokenizer splits every word, so masking must help strictly
    for lang in ("lang1", "lang2"):
        plain = report.find(lang, "char_ngram:2", False)
        masked = report.find(lang, "char_ngram:2", True)
        assert masked.ratio > plain.ratio
    # whole-word tokens are always boundary-aligned: nothing changes
    plain = report.find("lang1", "whitespace", False)
    masked = report.find("lang1", "whitespace", True)
    assert (masked.positives, masked.negatives) == (plain.positives, plain.negatives)
    assert masked.ratio == plain.ratio


# ---------------------------------------------------------------------------
# 11. joint-pass label overflow is loud


def test_criterion_11_label_overflow_never_truncates():
    model = SpanModel(ModelConfig(architecture="cross", base_vocab_size=32,
                                  d_model=8, d_mlp=6, d_width=3, max_span_len=3,
                                  max_seq_len=16, seed=2))
    text = list(range(6))
    label_ids = [[1, 2, 3] for _ in range(8)]  # 8 * (1 marker + 3) = 32 tokens
    with pytest.raises(SequenceOverflowError) as exc:
        model.score(text, label_ids, _plain_candidates(6, 3), _kinds(8))
    err = exc.value
    assert err.needed == 32 + 1 + 6
    assert err.limit == 16
    # budget after the text and separator is 9: exactly two labels of 4 fit
    assert err.fits_labels == 2
    assert "2 of 8" in str(err)


# ---------------------------------------------------------------------------
# 12. early stopping restores the best-scoring snapshot


def test_criterion_12_early_stopping_restores_best(tmp_path):
    ws = WhitespaceTokenizer(512)
    examples = tokenize_corpus(make_lang1(8, seed=5), ws)
    scripted = [0.5, 0.6, 0.4, 0.4, 0.4, 0.3]
    calls = []

    def hook(model, step):
        calls.append(step)
        return scripted[len(calls) - 1]

    config = TrainConfig(
        architecture="bi", seed=4, d_model=16, d_mlp=16, d_width=4,
        max_span_len=3, max_seq_len=64, batch_size=4, max_steps=50, lr=1e-3,
        loss=LossConfig(kind="bce"), eval_every=1, early_stopping=True,
        patience=3)
    result = train(config, examples, None, ws, eval_hook=hook)
    assert result.stopped_early
    assert calls == [1, 2, 3, 4, 5]  # three flat evals after the peak
    assert result.best_val_f1 == max(scripted[:5]) == 0.6
    assert result.best_step == 2

    # restored weights bit-equal an uninterrupted run halted at the best step
    reference = train(
        dataclasses.replace(config, max_steps=2, early_stopping=False,
                            eval_every=10 ** 6),
        examples, None, ws)
    ref_params = reference.model.parameters()
    for name, p in result.model.parameters().items():
        assert np.array_equal(p.data, ref_params[name].data)

    # and the snapshot survives a checkpoint round trip
    path = tmp_path / "best.json"
    save_checkpoint(path, result.model, step=result.step)
    loaded = load_checkpoint(path)
    for name, p in loaded.model.parameters().items():
        assert np.array_equal(p.data, result.model.parameters()[name].data)
