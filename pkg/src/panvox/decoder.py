"""Minimal attention decoder stack producing per-query 3D mask logits.

A fixed set of learned queries cross-attends to flattened voxel features.
Raw per-head attention maps double as mask evidence: a learned per-head
fusion turns them into mask logits on the feature grid, while the refined
queries feed per-class sigmoid classification. Everything is plain numpy;
math runs in float64 and results are stored as float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
from scipy.special import expit

from .grids import DimensionMismatchError, GridDims, MaskLogits3D
from .merging import MaskPrediction

__all__ = [
    "DecoderConfig",
    "LayerWeights",
    "DecoderWeights",
    "LayerOutput",
    "init_reference_points",
    "positional_encoding",
    "attention_layer",
    "fuse_heads",
    "forward_stack",
    "layer_predictions",
]


@dataclass
class DecoderConfig:
    """Shape and seeding of the decoder stack.

    pos_dim is the positional encoding width (divisible by 6); the query MLP
    maps it onto embed_dim, which must divide evenly into num_heads.
    sigmoid_masks squashes fused mask logits through a sigmoid before they
    leave the decoder.
    """

    num_queries: int = 300
    num_heads: int = 8
    num_layers: int = 3
    embed_dim: int = 256
    pos_dim: int = 252
    voxel_dims: GridDims = GridDims(64, 64, 8, 0.8)
    seed: int = 0
    sigmoid_masks: bool = False

    def __post_init__(self):
        if min(self.num_queries, self.num_heads, self.num_layers, self.embed_dim) < 1:
            raise ValueError("decoder sizes must be positive")
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if self.pos_dim % 6:
            raise ValueError(f"pos_dim {self.pos_dim} must be divisible by 6")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_dict(self) -> dict:
        return {
            "num_queries": self.num_queries,
            "num_heads": self.num_heads,
            "num_layers": self.num_layers,
            "embed_dim": self.embed_dim,
            "pos_dim": self.pos_dim,
            "voxel_dims": self.voxel_dims.to_dict(),
            "seed": self.seed,
            "sigmoid_masks": self.sigmoid_masks,
        }


@dataclass
class LayerWeights:
    key_w: np.ndarray
    key_b: np.ndarray
    value_w: np.ndarray
    value_b: np.ndarray
    fusion_w: np.ndarray
    fusion_b: float
    cls_w: np.ndarray
    cls_b: np.ndarray


@dataclass
class DecoderWeights:
    """All learned parameters: reference points, query MLP, per-layer maps."""

    reference_points: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    layers: list[LayerWeights]

    @property
    def num_classes(self) -> int:
        return self.layers[0].cls_w.shape[1]

    def validate_for(self, cfg: DecoderConfig) -> None:
        n, e, p = cfg.num_queries, cfg.embed_dim, cfg.pos_dim
        if self.reference_points.shape != (n, 3):
            raise DimensionMismatchError(
                f"reference points {self.reference_points.shape} != {(n, 3)}")
        if self.mlp_w1.shape != (p, e) or self.mlp_w2.shape != (e, e):
            raise DimensionMismatchError("query MLP shapes do not match the config")
        if len(self.layers) != cfg.num_layers:
            raise DimensionMismatchError(
                f"{len(self.layers)} layer weight sets for {cfg.num_layers} layers")
        for lw in self.layers:
            if lw.key_w.shape != (e, e) or lw.value_w.shape != (e, e):
                raise DimensionMismatchError("projection shapes do not match embed_dim")
            if lw.fusion_w.shape != (cfg.num_heads,):
                raise DimensionMismatchError("fusion weights must have one entry per head")

    @classmethod
    def random(cls, cfg: DecoderConfig, num_classes: int,
               rng: np.random.Generator | None = None) -> "DecoderWeights":
        """Seeded Gaussian init scaled by 1/sqrt(fan_in), zero biases."""
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        e, p, h = cfg.embed_dim, cfg.pos_dim, cfg.num_heads

        def mat(rows, cols):
            return (rng.standard_normal((rows, cols)) / sqrt(rows)).astype(np.float32)

        ref = rng.random((cfg.num_queries, 3)).astype(np.float32)
        mlp_w1, mlp_b1 = mat(p, e), np.zeros(e, np.float32)
        mlp_w2, mlp_b2 = mat(e, e), np.zeros(e, np.float32)
        layers = []
        for _ in range(cfg.num_layers):
            layers.append(LayerWeights(
                key_w=mat(e, e), key_b=np.zeros(e, np.float32),
                value_w=mat(e, e), value_b=np.zeros(e, np.float32),
                fusion_w=(rng.standard_normal(h) / sqrt(h)).astype(np.float32),
                fusion_b=0.0,
                cls_w=mat(e, num_classes), cls_b=np.zeros(num_classes, np.float32),
            ))
        return cls(ref, mlp_w1, mlp_b1, mlp_w2, mlp_b2, layers)


@dataclass
class LayerOutput:
    """One decoder layer: raw attention, refined queries, masks, class probs."""

    attention_maps: np.ndarray  # (num_queries, num_heads, num_voxels), pre-softmax
    refined_queries: np.ndarray  # (num_queries, embed_dim)
    mask_logits: list[MaskLogits3D]
    class_probs: np.ndarray  # (num_queries, num_classes), sigmoid outputs


def init_reference_points(cfg: DecoderConfig) -> np.ndarray:
    """Seeded uniform samples in [0, 1)^3, one 3D point per query."""
    rng = np.random.default_rng(cfg.seed)
    return rng.random((cfg.num_queries, 3)).astype(np.float32)


def positional_encoding(points: np.ndarray, embed_dim: int) -> np.ndarray:
    """Sinusoidal encoding per axis, sin/cos interleaved over embed_dim/6
    geometric frequencies, axis blocks concatenated."""
    if embed_dim % 6:
        raise ValueError(f"embed_dim {embed_dim} must be divisible by 6")
    pts = np.asarray(points, np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (n, 3), got {pts.shape}")
    n_freq = embed_dim // 6
    freqs = 10000.0 ** (-np.arange(n_freq) / n_freq)
    out = np.empty((pts.shape[0], embed_dim))
    for axis in range(3):
        ang = pts[:, axis, None] * freqs[None, :]
        block = out[:, axis * 2 * n_freq:(axis + 1) * 2 * n_freq]
        block[:, 0::2] = np.sin(ang)
        block[:, 1::2] = np.cos(ang)
    return out.astype(np.float32)


def attention_layer(
    queries: np.ndarray,
    voxel_features: np.ndarray,
    weights: LayerWeights,
    num_heads: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-head cross attention of queries over voxel features.

    Keys and values are projections of the features; queries attend as
    given. Returns the raw pre-softmax attention (n, heads, voxels) and the
    refined queries (softmax-weighted value mix, heads concatenated).
    """
    q = np.asarray(queries, np.float64)
    f = np.asarray(voxel_features, np.float64)
    if q.ndim != 2 or f.ndim != 2 or q.shape[1] != f.shape[1]:
        raise DimensionMismatchError(
            f"queries {q.shape} and features {f.shape} must share the embed dim")
    embed = q.shape[1]
    if embed % num_heads:
        raise DimensionMismatchError(f"embed dim {embed} not divisible by {num_heads} heads")
    dk = embed // num_heads
    keys = f @ weights.key_w.astype(np.float64) + weights.key_b.astype(np.float64)
    values = f @ weights.value_w.astype(np.float64) + weights.value_b.astype(np.float64)
    n, v = q.shape[0], f.shape[0]
    attention = np.empty((n, num_heads, v), np.float32)
    refined = np.empty((n, embed), np.float32)
    scale = 1.0 / sqrt(dk)
    for h in range(num_heads):
        sl = slice(h * dk, (h + 1) * dk)
        logits = (q[:, sl] @ keys[:, sl].T) * scale
        attention[:, h, :] = logits
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        refined[:, sl] = logits @ values[:, sl]
    return attention, refined


def fuse_heads(
    attention: np.ndarray,
    fusion_w: np.ndarray,
    fusion_b: float,
    dims: GridDims,
    apply_sigmoid: bool = False,
) -> list[MaskLogits3D]:
    """Per-voxel mask logit: learned linear blend of the head attentions."""
    att = np.asarray(attention)
    if att.ndim != 3 or att.shape[1] != np.asarray(fusion_w).shape[0]:
        raise DimensionMismatchError(
            f"attention shape {att.shape} incompatible with {len(fusion_w)} fusion weights")
    if att.shape[2] != dims.voxel_count:
        raise DimensionMismatchError(
            f"attention covers {att.shape[2]} voxels, grid has {dims.voxel_count}")
    fused = np.tensordot(att.astype(np.float64), np.asarray(fusion_w, np.float64), axes=(1, 0))
    fused += fusion_b
    if apply_sigmoid:
        fused = expit(fused)
    fused = fused.astype(np.float32)
    return [MaskLogits3D(dims, row.reshape(dims.shape)) for row in fused]


def forward_stack(
    cfg: DecoderConfig,
    weights: DecoderWeights,
    voxel_features: np.ndarray,
) -> list[LayerOutput]:
    """Run the full decoder: query init MLP, then the attention layers.

    voxel_features is (num_voxels, embed_dim) flattened x-major from the
    quarter-scale grid. Deterministic for fixed config and weights.
    """
    weights.validate_for(cfg)
    f = np.asarray(voxel_features, np.float64)
    if f.shape != (cfg.voxel_dims.voxel_count, cfg.embed_dim):
        raise DimensionMismatchError(
            f"features {f.shape} != {(cfg.voxel_dims.voxel_count, cfg.embed_dim)}")
    pe = positional_encoding(weights.reference_points, cfg.pos_dim).astype(np.float64)
    hidden = pe @ weights.mlp_w1.astype(np.float64) + weights.mlp_b1
    np.maximum(hidden, 0.0, out=hidden)
    q = hidden @ weights.mlp_w2.astype(np.float64) + weights.mlp_b2
    outputs: list[LayerOutput] = []
    for lw in weights.layers:
        attention, refined = attention_layer(q, f, lw, cfg.num_heads)
        masks = fuse_heads(attention, lw.fusion_w, lw.fusion_b,
                           cfg.voxel_dims, cfg.sigmoid_masks)
        logits = refined.astype(np.float64) @ lw.cls_w.astype(np.float64) + lw.cls_b
        probs = expit(logits).astype(np.float32)
        outputs.append(LayerOutput(attention, refined, masks, probs))
        q = refined.astype(np.float64)
    return outputs


def layer_predictions(layer: LayerOutput) -> list[MaskPrediction]:
    """Bridge one decoder layer into merge-ready mask predictions."""
    return [
        MaskPrediction(class_probs=layer.class_probs[i], logits=layer.mask_logits[i])
        for i in range(layer.class_probs.shape[0])
    ]
