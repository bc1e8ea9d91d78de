"""Run configuration: a flat key-value file with dotted section prefixes,
plus command-line overrides (the flag wins).

    # lines starting with # are comments
    data.train = corpora/train.jsonl
    tokenizer = char_ngram:2
    model.architecture = bi
    train.max_steps = 1000
    eval.thresholds = 0.05,0.1,0.15,0.2,0.3,0.4,0.5

Every key is validated against a fixed schema; unknown keys and untypeable
values fail with the key's name in the message.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluation import DEFAULT_THRESHOLDS
from .losses import LossConfig
from .training import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _thresholds(text: str) -> tuple[float, ...]:
    out = tuple(float(p) for p in text.split(",") if p.strip())
    if not out:
        raise ValueError("empty threshold list")
    if any(not (0.0 < t < 1.0) for t in out):
        raise ValueError("thresholds must lie strictly between 0 and 1")
    return out


def _opt(parse):
    return lambda text: None if text.strip() == "" else parse(text)


# key -> value parser; the single source of truth for what may appear in a
# config file or be overridden from the command line
SCHEMA = {
    "data.train": _opt(str),
    "data.val": _opt(str),
    "data.test": _opt(str),
    "data.cap": _opt(int),
    "data.sample": _bool,
    "data.boundary_mode": str,
    "tokenizer": str,
    "vocab_size": int,
    "seed": int,
    "output.dir": _opt(str),
    "output.format": str,
    "model.architecture": str,
    "model.d_model": int,
    "model.d_mlp": int,
    "model.d_width": int,
    "model.mlp_hidden": _opt(int),
    "model.activation": str,
    "train.batch_size": int,
    "train.max_steps": int,
    "train.lr": float,
    "train.encoder_lr": _opt(float),
    "train.weight_decay": float,
    "train.eval_every": int,
    "train.patience": int,
    "train.early_stopping": _bool,
    "train.max_span_len": int,
    "train.max_seq_len": int,
    "train.mask_word_boundaries": _bool,
    "loss.kind": str,
    "loss.pos_weight": float,
    "loss.alpha": float,
    "loss.gamma": float,
    "loss.typing_weight": float,
    "loss.threshold_weight": float,
    "eval.thresholds": _thresholds,
}

DEFAULTS = {
    "data.train": None, "data.val": None, "data.test": None,
    "data.cap": None, "data.sample": False, "data.boundary_mode": "expand",
    "tokenizer": "whitespace", "vocab_size": 2048, "seed": 0,
    "output.dir": None, "output.format": "json",
    "model.architecture": "bi", "model.d_model": 64, "model.d_mlp": 384,
    "model.d_width": 128, "model.mlp_hidden": None, "model.activation": "relu",
    "train.batch_size": 12, "train.max_steps": 1000, "train.lr": 3e-5,
    "train.encoder_lr": None, "train.weight_decay": 0.0,
    "train.eval_every": 50, "train.patience": 3, "train.early_stopping": True,
    "train.max_span_len": 30, "train.max_seq_len": 512,
    "train.mask_word_boundaries": False,
    "loss.kind": "bce", "loss.pos_weight": 1.0, "loss.alpha": 0.5,
    "loss.gamma": 0.0, "loss.typing_weight": 0.5, "loss.threshold_weight": 0.5,
    "eval.thresholds": DEFAULT_THRESHOLDS,
}

TOKENIZER_ALIASES = {"external-offsets-provided": "external"}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key -> string-value pairs; no typing yet."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, config_path: str | Path | None = None,
             overrides: dict[str, object] | None = None) -> "RunConfig":
        """Defaults, then the file, then overrides; each layer typed and
        checked against the schema."""
        values = dict(DEFAULTS)
        if config_path is not None:
            for key, raw in parse_config_file(config_path).items():
                if key not in SCHEMA:
                    raise ConfigError(f"unknown config key {key!r}")
                try:
                    values[key] = SCHEMA[key](raw)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{key}: {exc}") from None
        for key, val in (overrides or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            if val is None:
                continue
            if isinstance(val, str):
                try:
                    val = SCHEMA[key](val)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{key}: {exc}") from None
            values[key] = val
        cfg = cls(values)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def validate(self) -> None:
        fmt = self.values["output.format"]
        if fmt not in ("json", "table"):
            raise ConfigError(f"output.format: expected json or table, got {fmt!r}")
        mode = self.values["data.boundary_mode"]
        if mode not in ("expand", "exact"):
            raise ConfigError(f"data.boundary_mode: expected expand or exact, got {mode!r}")
        if self.values["vocab_size"] <= 0:
            raise ConfigError(f"vocab_size: must be positive, got {self.values['vocab_size']}")
        self.tokenizer_spec()  # raises on junk
        self.train_config()    # delegates numeric validation

    def tokenizer_spec(self) -> str:
        spec = self.values["tokenizer"]
        spec = TOKENIZER_ALIASES.get(spec, spec)
        if spec != "whitespace" and spec != "external" and not spec.startswith("char_ngram:"):
            raise ConfigError(
                f"tokenizer: expected whitespace, char_ngram:<n> or external, got {spec!r}")
        return spec

    def loss_config(self) -> LossConfig:
        v = self.values
        return LossConfig(
            kind=v["loss.kind"], pos_weight=v["loss.pos_weight"],
            alpha=v["loss.alpha"], gamma=v["loss.gamma"],
            typing_weight=v["loss.typing_weight"],
            threshold_weight=v["loss.threshold_weight"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            architecture=v["model.architecture"],
            seed=v["seed"],
            d_model=v["model.d_model"],
            d_mlp=v["model.d_mlp"],
            d_width=v["model.d_width"],
            mlp_hidden=v["model.mlp_hidden"],
            activation=v["model.activation"],
            max_span_len=v["train.max_span_len"],
            max_seq_len=v["train.max_seq_len"],
            batch_size=v["train.batch_size"],
            max_steps=v["train.max_steps"],
            lr=v["train.lr"],
            encoder_lr=v["train.encoder_lr"],
            weight_decay=v["train.weight_decay"],
            loss=self.loss_config(),
            eval_every=v["train.eval_every"],
            early_stopping=v["train.early_stopping"],
            patience=v["train.patience"],
            thresholds=v["eval.thresholds"],
            mask_word_boundaries=v["train.mask_word_boundaries"],
        )

    def to_json_dict(self) -> dict:
        out = {}
        for key in sorted(self.values):
            val = self.values[key]
            out[key] = list(val) if isinstance(val, tuple) else val
        return out
