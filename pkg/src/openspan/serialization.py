"""Checkpoint files: one JSON document holding the model (config plus every
tensor by canonical name), optimizer state, step count, the seed lineage,
and a hash of the configuration it was trained under.

Tensors travel as base64 of little-endian float64 bytes, so a save/load
round trip is bit-exact on any platform.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .heads import ModelConfig, SpanModel
from .seeding import stable_hash_hex

FORMAT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "b64": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["b64"])
    return np.frombuffer(raw, dtype="<f8").reshape(doc["shape"]).copy()


def config_hash(model_config: dict, train_config: dict | None) -> str:
    blob = json.dumps({"model": model_config, "train": train_config},
                      sort_keys=True).encode("utf-8")
    return stable_hash_hex(blob)


@dataclass
class Checkpoint:
    model: SpanModel
    optimizer_state: dict | None
    step: int
    train_config: dict | None
    config_hash: str
    root_seed: int


def save_checkpoint(
    path: str | Path,
    model: SpanModel,
    optimizer_state: dict | None = None,
    step: int = 0,
    train_config: dict | None = None,
) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": model.architecture,
        "model_config": model.config.to_json_dict(),
        "tensors": {name: _encode_array(p.data) for name, p in model.parameters().items()},
        "step": int(step),
        "train_config": train_config,
        "config_hash": config_hash(model.config.to_json_dict(), train_config),
        "seed_lineage": {
            "root_seed": model.config.seed,
            "derivation": "all streams derived from the root seed by name and counter",
        },
    }
    if optimizer_state is not None:
        doc["optimizer"] = {
            **{k: v for k, v in optimizer_state.items() if k not in ("m", "v")},
            "m": {k: _encode_array(v) for k, v in optimizer_state["m"].items()},
            "v": {k: _encode_array(v) for k, v in optimizer_state["v"].items()},
        }
    else:
        doc["optimizer"] = None
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {doc.get('format_version')!r} not supported "
            f"(expected {FORMAT_VERSION})")
    try:
        config = ModelConfig(**doc["model_config"])
        model = SpanModel(config)
        params = model.parameters()
        saved = doc["tensors"]
        missing = sorted(set(params) - set(saved))
        extra = sorted(set(saved) - set(params))
        if missing or extra:
            raise CheckpointError(
                f"tensor names do not match the architecture: missing {missing}, extra {extra}")
        for name, p in params.items():
            arr = _decode_array(saved[name])
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"tensor '{name}' has shape {arr.shape}, expected {p.data.shape}")
            p.data = arr
        optimizer_state = None
        if doc.get("optimizer") is not None:
            opt = dict(doc["optimizer"])
            opt["m"] = {k: _decode_array(v) for k, v in opt["m"].items()}
            opt["v"] = {k: _decode_array(v) for k, v in opt["v"].items()}
            optimizer_state = opt
        return Checkpoint(
            model=model,
            optimizer_state=optimizer_state,
            step=int(doc["step"]),
            train_config=doc.get("train_config"),
            config_hash=doc["config_hash"],
            root_seed=int(doc["seed_lineage"]["root_seed"]),
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
