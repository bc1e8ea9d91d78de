"""Training objectives over a score grid.

All of them see the same picture: a grid of logits, one per (candidate
span, label), a 0/1 gold matrix, and a mask. Masked-out pairs contribute
exactly nothing. Reduction is the mean over contributing pairs, where a
pair contributes iff its span is mask-true.

    bce              sum of per-pair binary cross-entropies
    bce_pos_weight   same, positive terms scaled by pos_weight
    focal            -alpha_t * (1 - p_t)^gamma * log(p_t); gamma = 0 with
                     alpha = 0.5 is plain cross-entropy halved
    contrastive      softmax over each gold pair against its same-label
                     negatives, plus a binary term against a learned
                     decision threshold

Probabilities are clamped to [1e-12, 1 - 1e-12] before any log, so a
saturated sigmoid never produces a non-finite loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    EPS_PROB,
    Tensor,
    add,
    add_scalar,
    clamp,
    concat,
    log,
    logsumexp,
    mul,
    neg,
    power,
    scale,
    sigmoid,
    take_flat,
    tsum,
)
from .errors import ConfigError
from .evaluation import Prediction, decode
from .heads import ScoreGrid

LOSS_KINDS = ("bce", "bce_pos_weight", "focal", "contrastive")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "bce"
    pos_weight: float = 1.0       # bce_pos_weight: scales positive terms
    alpha: float = 0.5            # focal: weight on positive pairs
    gamma: float = 0.0            # focal: down-weighting exponent
    typing_weight: float = 0.5    # contrastive: weight of the softmax term
    threshold_weight: float = 0.5  # contrastive: weight of the threshold term

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss.kind: expected one of {LOSS_KINDS}, got {self.kind!r}")
        if self.pos_weight <= 0:
            raise ConfigError(f"loss.pos_weight: must be positive, got {self.pos_weight}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"loss.alpha: must lie in [0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"loss.gamma: must be non-negative, got {self.gamma}")
        if self.typing_weight < 0 or self.threshold_weight < 0:
            raise ConfigError("loss weights must be non-negative")

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind, "pos_weight": self.pos_weight, "alpha": self.alpha,
            "gamma": self.gamma, "typing_weight": self.typing_weight,
            "threshold_weight": self.threshold_weight,
        }


def _grid_targets(grid: ScoreGrid) -> tuple[np.ndarray, np.ndarray, int]:
    """(gold 0/1 matrix, pair mask matrix, contributing pair count)."""
    n_spans, n_labels = grid.logits.data.shape
    y = np.zeros((n_spans, n_labels))
    for k, labels in enumerate(grid.candidates.gold):
        for n in labels:
            y[k, n] = 1.0
    row_mask = np.asarray(grid.candidates.mask, dtype=float).reshape(-1, 1)
    pair_mask = np.broadcast_to(row_mask, (n_spans, n_labels)).copy()
    contributing = int(round(pair_mask.sum()))
    return y, pair_mask, contributing


def _clamped_probs(logits: Tensor) -> Tensor:
    return clamp(sigmoid(logits), EPS_PROB, 1.0 - EPS_PROB)


def _weighted_bce(logits: Tensor, y: np.ndarray, pair_mask: np.ndarray,
                  contributing: int, pos_weight: float) -> Tensor:
    p = _clamped_probs(logits)
    log_p = log(p)
    log_not_p = log(add_scalar(neg(p), 1.0))
    w_pos = Tensor(-pos_weight * y * pair_mask)
    w_neg = Tensor(-(1.0 - y) * pair_mask)
    total = add(tsum(mul(w_pos, log_p)), tsum(mul(w_neg, log_not_p)))
    return scale(total, 1.0 / contributing)


def bce_loss(grid: ScoreGrid, cfg: LossConfig) -> Tensor:
    """Binary cross-entropy over every contributing (span, label) pair."""
    y, pair_mask, contributing = _grid_targets(grid)
    if contributing == 0:
        return Tensor(0.0)
    pos_weight = cfg.pos_weight if cfg.kind == "bce_pos_weight" else 1.0
    return _weighted_bce(grid.logits, y, pair_mask, contributing, pos_weight)


def focal_loss(grid: ScoreGrid, cfg: LossConfig) -> Tensor:
    """Down-weights well-classified pairs by (1 - p_t)^gamma.

    p_t is p for gold pairs and 1 - p otherwise; alpha_t likewise switches
    between alpha and 1 - alpha. gamma = 0 recovers alpha-weighted
    cross-entropy.
    """
    y, pair_mask, contributing = _grid_targets(grid)
    if contributing == 0:
        return Tensor(0.0)
    p = _clamped_probs(grid.logits)
    # p_t = y*p + (1-y)*(1-p), affine in p
    p_t = add(mul(Tensor(2.0 * y - 1.0), p), Tensor(1.0 - y))
    alpha_t = cfg.alpha * y + (1.0 - cfg.alpha) * (1.0 - y)
    modulator = power(add_scalar(neg(p_t), 1.0), cfg.gamma)
    weighted = mul(Tensor(-alpha_t * pair_mask), mul(modulator, log(p_t)))
    return scale(tsum(weighted), 1.0 / contributing)


def contrastive_loss(grid: ScoreGrid, cfg: LossConfig, threshold_logit: Tensor) -> Tensor:
    """Softmax typing term plus a learned-threshold selection term.

    Typing: each gold (span, label) pair competes against the mask-true
    negatives of the same label within this example; the term is the mean
    negative log-probability of picking the gold span. A gold pair with no
    negatives contributes exactly zero.

    Thresholding: binary cross-entropy of every contributing pair's logit
    measured against the learned threshold, so spans score above it exactly
    when they should be emitted. The threshold trains with everything else.
    """
    y, pair_mask, contributing = _grid_targets(grid)
    if contributing == 0:
        return Tensor(0.0)
    n_spans, n_labels = grid.logits.data.shape
    mask = grid.candidates.mask

    # typing term over gold pairs of mask-true spans
    gold_pairs = [(k, n) for k in range(n_spans) if mask[k]
                  for n in sorted(grid.candidates.gold[k])]
    typing_terms: list[Tensor] = []
    for k, n in gold_pairs:
        negatives = [s * n_labels + n for s in range(n_spans)
                     if mask[s] and n not in grid.candidates.gold[s]]
        flat = [k * n_labels + n] + negatives
        z = take_flat(grid.logits, flat)
        z_pos = take_flat(grid.logits, [k * n_labels + n])
        typing_terms.append(add(logsumexp(z), neg(tsum(z_pos))))
    if typing_terms:
        typing = scale(_sum_tensors(typing_terms), 1.0 / len(typing_terms))
    else:
        typing = Tensor(0.0)

    # selection term: logits vs the learned threshold
    shifted = add(grid.logits, neg(threshold_logit))
    selection = _weighted_bce(shifted, y, pair_mask, contributing, 1.0)

    return add(scale(typing, cfg.typing_weight), scale(selection, cfg.threshold_weight))


def _sum_tensors(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total


def compute_loss(grid: ScoreGrid, cfg: LossConfig,
                 threshold_logit: Tensor | None = None) -> Tensor:
    if cfg.kind in ("bce", "bce_pos_weight"):
        return bce_loss(grid, cfg)
    if cfg.kind == "focal":
        return focal_loss(grid, cfg)
    if threshold_logit is None:
        raise ConfigError("contrastive loss needs the model's threshold parameter")
    return contrastive_loss(grid, cfg, threshold_logit)


def decode_without_threshold(grid: ScoreGrid, threshold_logit: float,
                             overlap_policy: str = "flat_greedy") -> list[Prediction]:
    """Decode using the learned threshold instead of a fixed probability.

    A pair is emitted iff its logit clears the learned threshold; overlap
    resolution matches ordinary decoding.
    """
    t = float(_sigmoid_scalar(threshold_logit))
    return decode(grid, t, overlap_policy)


def _sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)
