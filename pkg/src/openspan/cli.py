"""Command-line entry point.

Subcommands: train, evaluate, sweep, stats, validate-data. Exit codes:
0 success, 1 runtime failure, 2 usage or validation problem. Every output
artifact is a pure function of the inputs and the root seed, so re-running
a command overwrites its outputs with identical bytes.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from pathlib import Path

from .config import TOKENIZER_ALIASES, RunConfig
from .data import (
    LabelSet,
    ProvidedOffsetsTokenizer,
    RawExample,
    build_tokenizer,
    load_jsonl,
    remap_entities,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    OpenSpanError,
    TrainingError,
)
from .evaluation import DEFAULT_THRESHOLDS
from .figures import plot_ratio_bars, plot_threshold_sweep, plot_training_curves
from .serialization import load_checkpoint, save_checkpoint
from .spans import gradient_coverage, ratio_report
from .training import evaluate_model, train


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data", help="comma-separated JSONL paths or globs")
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--thresholds", help="comma-separated decision thresholds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=["json", "table"], help="report format")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--tokenizer",
                   help="whitespace | char_ngram:<n> | external (comma-separated for stats)")
    p.add_argument("--max-span-len", type=int, help="candidate span length cap")
    p.add_argument("--mask-word-boundaries", action="store_const", const=True,
                   default=None, help="restrict candidates to word-aligned spans")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openspan",
        description="Span-based open-label entity recognition over free-text "
                    "label descriptions.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train", "train a model and write checkpoint, metrics and reports"),
        ("evaluate", "score a corpus with a saved checkpoint"),
        ("sweep", "evaluate across the decision-threshold grid with a figure"),
        ("stats", "corpus span statistics: positive ratios and id coverage"),
        ("validate-data", "parse and validate JSONL corpora"),
    ]:
        _add_common(sub.add_parser(name, help=help_text))
    return parser


def _overrides(args) -> dict:
    out = {
        "seed": args.seed,
        "output.format": args.format,
        "output.dir": args.out,
        "eval.thresholds": args.thresholds,
        "train.max_span_len": args.max_span_len,
        "train.mask_word_boundaries": args.mask_word_boundaries,
    }
    tok = args.tokenizer
    if tok and "," not in tok:  # comma lists are only for stats
        out["tokenizer"] = tok
    return out


def _expand_patterns(patterns: str, field: str) -> list[Path]:
    paths: list[Path] = []
    for pattern in patterns.split(","):
        pattern = pattern.strip()
        if not pattern:
            continue
        hits = sorted(glob.glob(pattern))
        if not hits:
            raise ConfigError(f"{field}: no files match {pattern!r}")
        paths.extend(Path(h) for h in hits)
    if not paths:
        raise ConfigError(f"{field}: empty path list")
    return paths


def _load_raw_datasets(patterns: str, field: str, cap, sample, seed
                       ) -> dict[str, list[RawExample]]:
    out: dict[str, list[RawExample]] = {}
    for path in _expand_patterns(patterns, field):
        name = path.stem
        if name in out:
            raise ConfigError(f"{field}: duplicate dataset name {name!r}")
        out[name] = load_jsonl(path, cap=cap, sample=sample, seed=seed)
    return out


def _make_tokenizer(spec: str, vocab_size: int, raws: list[RawExample]):
    tok = build_tokenizer(spec, vocab_size)
    if isinstance(tok, ProvidedOffsetsTokenizer):
        tok.register_corpus(raws)
    return tok


def _tokenize_datasets(datasets: dict[str, list[RawExample]], tokenizer,
                       boundary_mode: str):
    out = {}
    for name, raws in datasets.items():
        label_set = LabelSet.from_examples(raws)
        out[name] = [remap_entities(r, tokenizer, boundary_mode, label_set=label_set)
                     for r in raws]
    return out


def _write_report(report, out_dir: Path | None, fmt: str, figure: bool) -> None:
    if out_dir is None:
        sys.stdout.write(report.render_table() if fmt == "table" else report.to_json())
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval_report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "eval_report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    if figure:
        plot_threshold_sweep(report, out_dir / "sweep_f1.png")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    data_field = args.data or cfg["data.train"]
    if not data_field:
        raise ConfigError("data.train: required for train")
    if cfg["output.dir"] is None:
        raise ConfigError("output.dir: required for train")
    out_dir = Path(cfg["output.dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    train_sets = _load_raw_datasets(data_field, "data.train", cfg["data.cap"],
                                    cfg["data.sample"], cfg["seed"])
    all_train_raws = [r for raws in train_sets.values() for r in raws]
    tokenizer = _make_tokenizer(cfg.tokenizer_spec(), cfg["vocab_size"], all_train_raws)
    train_tok = _tokenize_datasets(train_sets, tokenizer, cfg["data.boundary_mode"])
    train_examples = [ex for exs in train_tok.values() for ex in exs]

    val_examples = None
    val_tok = None
    if cfg["data.val"]:
        val_sets = _load_raw_datasets(cfg["data.val"], "data.val", cfg["data.cap"],
                                      cfg["data.sample"], cfg["seed"])
        if isinstance(tokenizer, ProvidedOffsetsTokenizer):
            tokenizer.register_corpus([r for raws in val_sets.values() for r in raws])
        val_tok = _tokenize_datasets(val_sets, tokenizer, cfg["data.boundary_mode"])
        val_examples = [ex for exs in val_tok.values() for ex in exs]

    train_config = cfg.train_config()
    result = train(train_config, train_examples, val_examples, tokenizer,
                   metrics_path=out_dir / "metrics.jsonl")

    save_checkpoint(out_dir / "checkpoint.json", result.model,
                    optimizer_state=result.optimizer.state_dict(),
                    step=result.step, train_config=train_config.to_json_dict())
    (out_dir / "run_config.json").write_text(
        json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    if result.metrics:
        plot_training_curves(result.metrics, out_dir / "training_curves.png")

    # final report on the strongest split available: test, else val, else train
    if cfg["data.test"]:
        test_sets = _load_raw_datasets(cfg["data.test"], "data.test", cfg["data.cap"],
                                       cfg["data.sample"], cfg["seed"])
        if isinstance(tokenizer, ProvidedOffsetsTokenizer):
            tokenizer.register_corpus([r for raws in test_sets.values() for r in raws])
        report_corpus = _tokenize_datasets(test_sets, tokenizer, cfg["data.boundary_mode"])
    elif val_tok:
        report_corpus = val_tok
    else:
        report_corpus = train_tok
    report = evaluate_model(result.model, report_corpus, tokenizer,
                            thresholds=cfg["eval.thresholds"],
                            max_span_len=train_config.max_span_len,
                            mask_word_boundaries=train_config.mask_word_boundaries,
                            seed=cfg["seed"])
    _write_report(report, out_dir, cfg["output.format"], figure=True)
    return 0


def _load_eval_pieces(args):
    cfg = RunConfig.load(args.config, _overrides(args))
    if not args.checkpoint:
        raise ConfigError("checkpoint: required")
    data_field = args.data or cfg["data.test"]
    if not data_field:
        raise ConfigError("data: required (flag --data or config data.test)")
    ck = load_checkpoint(args.checkpoint)
    datasets = _load_raw_datasets(data_field, "data", cfg["data.cap"],
                                  cfg["data.sample"], cfg["seed"])
    all_raws = [r for raws in datasets.values() for r in raws]
    # the checkpoint dictates the vocabulary; the config picks the algorithm
    tokenizer = _make_tokenizer(cfg.tokenizer_spec(), ck.model.config.base_vocab_size,
                                all_raws)
    corpus = _tokenize_datasets(datasets, tokenizer, cfg["data.boundary_mode"])
    return cfg, ck, tokenizer, corpus


def cmd_evaluate(args) -> int:
    cfg, ck, tokenizer, corpus = _load_eval_pieces(args)
    report = evaluate_model(ck.model, corpus, tokenizer,
                            thresholds=cfg["eval.thresholds"],
                            mask_word_boundaries=cfg["train.mask_word_boundaries"],
                            seed=cfg["seed"])
    out_dir = Path(cfg["output.dir"]) if cfg["output.dir"] else None
    _write_report(report, out_dir, cfg["output.format"], figure=False)
    return 0


def cmd_sweep(args) -> int:
    cfg, ck, tokenizer, corpus = _load_eval_pieces(args)
    thresholds = cfg["eval.thresholds"] if args.thresholds else DEFAULT_THRESHOLDS
    report = evaluate_model(ck.model, corpus, tokenizer, thresholds=thresholds,
                            mask_word_boundaries=cfg["train.mask_word_boundaries"],
                            seed=cfg["seed"])
    out_dir = Path(cfg["output.dir"]) if cfg["output.dir"] else None
    _write_report(report, out_dir, cfg["output.format"], figure=True)
    return 0


def cmd_stats(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    data_field = args.data or cfg["data.train"]
    if not data_field:
        raise ConfigError("data: required (flag --data or config data.train)")
    datasets = _load_raw_datasets(data_field, "data", cfg["data.cap"],
                                  cfg["data.sample"], cfg["seed"])
    corpus = [r for raws in datasets.values() for r in raws]
    specs = [s.strip() for s in (args.tokenizer or cfg["tokenizer"]).split(",")
             if s.strip()]
    if not specs:
        raise ConfigError("tokenizer: empty list")
    tokenizers = [_make_tokenizer(TOKENIZER_ALIASES.get(s, s), cfg["vocab_size"], corpus)
                  for s in specs]
    report = ratio_report(corpus, tokenizers, cfg["train.max_span_len"],
                          cfg["data.boundary_mode"])
    coverage = {tok.name: gradient_coverage(corpus, tok) for tok in tokenizers}
    doc = {"ratios": report.to_json_rows(), "gradient_coverage": coverage,
           "seed": cfg["seed"]}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if cfg["output.dir"]:
        out_dir = Path(cfg["output.dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "stats.json").write_text(text, encoding="utf-8")
        if report.rows:
            plot_ratio_bars(report, out_dir / "ratio_chart.png")
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate_data(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    data_field = args.data or cfg["data.train"]
    if not data_field:
        raise ConfigError("data: required")
    summary = {}
    for path in _expand_patterns(data_field, "data"):
        raws = load_jsonl(path)
        summary[str(path)] = {
            "examples": len(raws),
            "entities": sum(len(r.entities) for r in raws),
            "languages": sorted({r.language for r in raws}),
            "labels": sorted({e.label for r in raws for e in r.entities}),
            "with_word_boundaries": sum(1 for r in raws if r.word_boundaries),
        }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "stats": cmd_stats,
    "validate-data": cmd_validate_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, OpenSpanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
