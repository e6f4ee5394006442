"""Assignment costs and training losses for mask set prediction.

The matching cost couples a classification focal term with a mask dice term;
the same two functions also produce the training losses after assignment,
so cost and loss cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit

from .grids import BinaryMask3D, DimensionMismatchError, GridDims, MaskLogits3D, SemanticGrid
from .merging import MaskPrediction
from .taxonomy import ClassTaxonomy

__all__ = [
    "LossWeights",
    "dice_loss",
    "focal_loss",
    "weighted_cross_entropy",
    "downsample_majority",
    "matching_cost",
    "hungarian",
    "instance_loss",
]


@dataclass
class LossWeights:
    """Loss mixing weights plus focal parameters and decoder depth."""

    lambda_cls: float = 1.0
    lambda_mask: float = 2.0
    num_decoder_layers: int = 3
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def __post_init__(self):
        if self.lambda_cls < 0 or self.lambda_mask < 0:
            raise ValueError("loss weights must be non-negative")
        if self.num_decoder_layers < 1:
            raise ValueError("num_decoder_layers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lambda_cls": self.lambda_cls,
            "lambda_mask": self.lambda_mask,
            "num_decoder_layers": self.num_decoder_layers,
            "focal_gamma": self.focal_gamma,
            "focal_alpha": self.focal_alpha,
        }


def dice_loss(logits: MaskLogits3D, gt: BinaryMask3D) -> float:
    """1 - (2*sum(p*g) + 1) / (sum(p) + sum(g) + 1) with p = sigmoid(logits)."""
    if logits.dims != gt.dims:
        raise DimensionMismatchError(f"logit dims {logits.dims} != gt dims {gt.dims}")
    p = expit(logits.values.astype(np.float64))
    g = gt.bits
    num = 2.0 * float(p[g].sum()) + 1.0
    den = float(p.sum()) + float(np.count_nonzero(g)) + 1.0
    return 1.0 - num / den


def focal_loss(
    class_probs: np.ndarray,
    gt_class: int | None,
    gamma: float = 2.0,
    alpha: float = 0.25,
) -> float:
    """Sigmoid focal classification loss summed over classes.

    The target is one-hot at gt_class, or all zeros ("none") when gt_class
    is None. Probabilities exactly 0 or 1 are rejected: the log terms
    diverge there.
    """
    p = np.asarray(class_probs, np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("class_probs must be a non-empty 1-D vector")
    if not np.isfinite(p).all() or p.min() <= 0.0 or p.max() >= 1.0:
        raise ValueError("class probabilities must lie strictly inside (0, 1)")
    t = np.zeros(p.size)
    if gt_class is not None:
        if not 0 <= gt_class < p.size:
            raise ValueError(f"gt_class {gt_class} out of range for {p.size} classes")
        t[gt_class] = 1.0
    loss = -alpha * t * (1.0 - p) ** gamma * np.log(p) \
        - (1.0 - alpha) * (1.0 - t) * p ** gamma * np.log(1.0 - p)
    return float(loss.sum())


def weighted_cross_entropy(
    class_scores: np.ndarray,
    gt: SemanticGrid,
    class_weights: Sequence[float],
    taxonomy: ClassTaxonomy,
) -> float:
    """Mean over evaluable voxels of w[gt] * (-log softmax(scores)[gt]).

    class_scores has shape (h, w, d, C) with channels ordered free first,
    then the semantic classes in taxonomy order. Unknown gt voxels are
    excluded from the mean.
    """
    channels = taxonomy.prediction_channels()
    scores = np.asarray(class_scores, np.float64)
    if scores.shape != gt.dims.shape + (len(channels),):
        raise DimensionMismatchError(
            f"scores shape {scores.shape} != {gt.dims.shape + (len(channels),)}")
    weights = np.asarray(class_weights, np.float64)
    if weights.shape != (len(channels),):
        raise ValueError(f"need {len(channels)} class weights, got {weights.shape}")
    lut = np.full(65536, -1, np.int64)
    for idx, cid in enumerate(channels):
        lut[cid] = idx
    if taxonomy.unknown_id is not None:
        valid = gt.labels != taxonomy.unknown_id
    else:
        valid = np.ones(gt.dims.shape, bool)
    target = lut[gt.labels[valid]]
    if np.any(target < 0):
        raise ValueError("gt contains labels without a score channel")
    if target.size == 0:
        return 0.0
    s = scores[valid]
    m = s.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(s - m).sum(axis=1)) + m[:, 0]
    nll = log_z - s[np.arange(s.shape[0]), target]
    return float(np.mean(weights[target] * nll))


def downsample_majority(mask: BinaryMask3D, target: GridDims) -> BinaryMask3D:
    """Majority pooling over blocks; exact ties count as occupied."""
    fx, fy, fz = target.upscale_factors(mask.dims)
    h, w, d = target.shape
    blocks = mask.bits.reshape(h, fx, w, fy, d, fz)
    counts = blocks.sum(axis=(1, 3, 5), dtype=np.int64)
    return BinaryMask3D(target, counts * 2 >= fx * fy * fz)


def matching_cost(
    preds: list[MaskPrediction],
    gts: list[tuple[int, BinaryMask3D]],
    weights: LossWeights,
) -> np.ndarray:
    """Dense cost matrix lambda_cls * focal + lambda_mask * dice.

    gts pair a foreground-class index (position in the class_probs vector)
    with a quarter-scale mask. The dice term is vectorized over all pairs;
    the focal term reuses focal_loss per pair.
    """
    n, m = len(preds), len(gts)
    cost = np.zeros((n, m))
    if n == 0 or m == 0:
        return cost
    dims = preds[0].logits.dims
    for i, p in enumerate(preds):
        if p.logits.dims != dims:
            raise DimensionMismatchError("predictions disagree on mask dims")
    for j, (_, g) in enumerate(gts):
        if g.dims != dims:
            raise DimensionMismatchError(
                f"gt mask {j} dims {g.dims} != prediction dims {dims}")
    pmat = expit(np.stack([p.logits.values.reshape(-1) for p in preds]).astype(np.float64))
    gmat = np.stack([g.bits.reshape(-1) for _, g in gts]).astype(np.float64)
    inter = pmat @ gmat.T
    psum = pmat.sum(axis=1)[:, None]
    gsum = gmat.sum(axis=1)[None, :]
    dice = 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0)
    for i, p in enumerate(preds):
        for j, (cls_index, _) in enumerate(gts):
            focal = focal_loss(p.class_probs, cls_index,
                               weights.focal_gamma, weights.focal_alpha)
            cost[i, j] = weights.lambda_cls * focal + weights.lambda_mask * dice[i, j]
    return cost


def hungarian(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost assignment covering every column.

    Requires at least as many rows (predictions) as columns (ground truth);
    returns (row_indices, col_indices) with rows ascending.
    """
    costs = np.asarray(costs, np.float64)
    if costs.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if costs.shape[1] > costs.shape[0]:
        raise DimensionMismatchError(
            f"{costs.shape[1]} ground-truth columns exceed {costs.shape[0]} prediction rows")
    if not np.isfinite(costs).all():
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(costs)
    return rows, cols


def instance_loss(
    per_layer: Sequence[tuple[Sequence[float], Sequence[float], Sequence[float]]],
    weights: LossWeights,
) -> float:
    """Deep-supervision total over decoder layers.

    Each layer contributes lambda_cls * L_cls + lambda_mask * L_mask where
    L_cls averages focal losses over all predictions (matched ones against
    their class, unmatched ones against "none") and L_mask averages dice
    over the matched pairs.
    """
    if len(per_layer) != weights.num_decoder_layers:
        raise ValueError(
            f"got {len(per_layer)} layers of losses for "
            f"{weights.num_decoder_layers} decoder layers")
    total = 0.0
    for matched_focal, matched_dice, unmatched_focal in per_layer:
        cls_terms = list(matched_focal) + list(unmatched_focal)
        l_cls = float(np.mean(cls_terms)) if cls_terms else 0.0
        l_mask = float(np.mean(matched_dice)) if len(matched_dice) else 0.0
        total += weights.lambda_cls * l_cls + weights.lambda_mask * l_mask
    return total
