"""Score-ordered fusion of predicted instance masks into a background scene.

Predictions are visited in descending confidence order. Each surviving mask
claims only voxels that are still free, so earlier (more confident) masks
shadow later ones. A mask is dropped when its confidence is too low, when too
little of it lands on free space, or when too little of it lies inside the
sensor field of view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import (
    DimensionMismatchError,
    FovMask,
    GridDims,
    InstanceGrid,
    MaskLogits3D,
    SemanticGrid,
    _expand_axis,
    _phase_offsets,
)
from .taxonomy import ClassTaxonomy

__all__ = [
    "MergeConfig",
    "MaskPrediction",
    "MergeRecord",
    "confidence_score",
    "zero_foreground",
    "merge",
    "merge_with_log",
]


@dataclass
class MergeConfig:
    """Thresholds and exponents of the mask-wise merge.

    t_q gates the confidence score, t_overlap the free-space fraction, t_fov
    the field-of-view fraction. All three tests are strict (>). alpha and
    beta weigh the class-probability and mask-quality factors of the score;
    mask_threshold binarizes upsampled logits (again strictly).
    """

    t_q: float = 0.2
    t_overlap: float = 0.5
    t_fov: float = 0.5
    alpha: float = 1.0 / 3.0
    beta: float = 1.0
    mask_threshold: float = 0.25

    def __post_init__(self):
        for name in ("t_q", "t_overlap", "t_fov", "mask_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {v}")

    def to_dict(self) -> dict:
        return {
            "t_q": self.t_q,
            "t_overlap": self.t_overlap,
            "t_fov": self.t_fov,
            "alpha": self.alpha,
            "beta": self.beta,
            "mask_threshold": self.mask_threshold,
        }


@dataclass
class MaskPrediction:
    """One predicted instance: foreground class probabilities plus mask logits.

    class_probs has one entry per thing class, each in [0, 1]. score is
    filled lazily by confidence_score (or read from file) and may be None.
    """

    class_probs: np.ndarray
    logits: MaskLogits3D
    score: float | None = None

    def __post_init__(self):
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)
        if self.class_probs.ndim != 1:
            raise ValueError("class_probs must be a 1-D vector")
        if not np.isfinite(self.class_probs).all():
            raise ValueError("class_probs must be finite")
        if self.class_probs.size and (
            self.class_probs.min() < 0.0 or self.class_probs.max() > 1.0
        ):
            raise ValueError("class_probs must lie in [0, 1]")


@dataclass
class MergeRecord:
    """Per-prediction outcome of one merge run."""

    index: int
    score: float
    kept: bool
    reason: str | None = None  # "score" | "overlap" | "fov" for discards
    instance_id: int | None = None
    class_id: int | None = None
    mask_voxels: int | None = None
    claimed_voxels: int | None = None
    overlap_ratio: float | None = None
    fov_ratio: float | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "score": self.score,
            "kept": self.kept,
            "reason": self.reason,
            "instance_id": self.instance_id,
            "class_id": self.class_id,
            "mask_voxels": self.mask_voxels,
            "claimed_voxels": self.claimed_voxels,
            "overlap_ratio": self.overlap_ratio,
            "fov_ratio": self.fov_ratio,
        }


def confidence_score(pred: MaskPrediction, cfg: MergeConfig) -> float:
    """p^alpha * q^beta with p the best class probability and q the mean
    logit over voxels exceeding the mask threshold (0 when none do)."""
    probs = pred.class_probs
    if probs.size == 0:
        raise ValueError("empty class probability vector")
    p = float(probs.max())
    vals = pred.logits.values
    sel = vals > cfg.mask_threshold
    q = float(vals[sel].mean(dtype=np.float64)) if sel.any() else 0.0
    return p ** cfg.alpha * q ** cfg.beta


def zero_foreground(sem: SemanticGrid, taxonomy: ClassTaxonomy) -> SemanticGrid:
    """Replace every thing-class voxel with the free label."""
    lut = np.zeros(65536, bool)
    lut[list(taxonomy.thing_ids)] = True
    labels = sem.labels.copy()
    labels[lut[labels]] = taxonomy.free_id
    return SemanticGrid(sem.dims, labels)


class _FusedUpsampler:
    """Binarized trilinear upsampling without materializing the float grid.

    Reuses the exact per-axis op order of grids._expand_axis so the bits
    equal binarize(upsample_trilinear(src)) bit for bit, then packs them.
    """

    def __init__(self, src_dims: GridDims, dst_dims: GridDims):
        fx, fy, fz = src_dims.upscale_factors(dst_dims)
        h, w, d = src_dims.shape
        H, W, D = dst_dims.shape
        self.fx, self.fy, self.fz = fx, fy, fz
        self.a1 = np.empty((h, w, D), np.float32)
        self.a2 = np.empty((h, W, D), np.float32)
        self.delta = np.empty((max(h - 1, 0), W, D), np.float32)
        self.tmp = np.empty((max(h - 1, 0), W, D), np.float32)
        self.bits = np.empty((H, W, D), bool)

    def binarize_upsampled(self, values: np.ndarray, threshold: float) -> np.ndarray:
        a1, a2, bits = self.a1, self.a2, self.bits
        _expand_axis(values, self.fz, 2, a1)
        _expand_axis(a1, self.fy, 1, a2)
        tau = np.float32(threshold)
        if self.fx == 1:
            np.greater(a2, tau, out=bits)
            return bits
        np.subtract(a2[1:], a2[:-1], out=self.delta)
        for r, c in enumerate(_phase_offsets(self.fx)):
            dst = bits[r::self.fx]
            if c < 0.0:
                np.multiply(self.delta, np.float32(1.0 + c), out=self.tmp)
                self.tmp += a2[:-1]
                np.greater(self.tmp, tau, out=dst[1:])
                np.greater(a2[0], tau, out=dst[0])
            else:
                np.multiply(self.delta, np.float32(c), out=self.tmp)
                self.tmp += a2[:-1]
                np.greater(self.tmp, tau, out=dst[:-1])
                np.greater(a2[-1], tau, out=dst[-1])
        return bits


def _popcount(packed: np.ndarray) -> int:
    return int(np.bitwise_count(packed).sum(dtype=np.int64))


def merge_with_log(
    bg: SemanticGrid,
    fov: FovMask,
    preds: list[MaskPrediction],
    cfg: MergeConfig,
    taxonomy: ClassTaxonomy,
) -> tuple[SemanticGrid, InstanceGrid, list[MergeRecord]]:
    """merge plus a per-prediction decision record (file order)."""
    dims = bg.dims
    if fov.dims != dims:
        raise DimensionMismatchError(f"FOV dims {fov.dims} != background dims {dims}")
    n_things = len(taxonomy.thing_ids)
    thing_ids = np.asarray(taxonomy.thing_ids, np.uint16)
    for i, p in enumerate(preds):
        if p.class_probs.size != n_things:
            raise ValueError(
                f"prediction {i}: {p.class_probs.size} class probs for {n_things} thing classes")
        p.logits.dims.upscale_factors(dims)  # raises on incompatible shape

    scores = [p.score if p.score is not None else confidence_score(p, cfg) for p in preds]
    # stable descending sort: equal scores keep file order
    order = sorted(range(len(preds)), key=lambda i: -scores[i])

    labels = bg.labels.copy()
    ids = np.zeros(dims.shape, np.uint32)
    free_packed = np.packbits(labels.ravel() == taxonomy.free_id)
    fov_packed = np.packbits(fov.bits.ravel())

    upsamplers: dict[tuple[int, int, int], _FusedUpsampler] = {}
    records: list[MergeRecord | None] = [None] * len(preds)
    next_id = 1
    for i in order:
        s = scores[i]
        rec = MergeRecord(index=i, score=float(s), kept=False)
        records[i] = rec
        if not s > cfg.t_q:
            rec.reason = "score"
            continue
        src = preds[i].logits
        ws = upsamplers.get(src.dims.shape)
        if ws is None:
            ws = upsamplers[src.dims.shape] = _FusedUpsampler(src.dims, dims)
        bits = ws.binarize_upsampled(src.values, cfg.mask_threshold)
        packed = np.packbits(bits.reshape(-1))
        total = _popcount(packed)
        np.bitwise_and(packed, free_packed, out=packed)  # packed becomes the non-overlap part
        claimed = _popcount(packed)
        rec.mask_voxels = total
        rec.claimed_voxels = claimed
        rec.overlap_ratio = claimed / total if total else 0.0
        if not rec.overlap_ratio > cfg.t_overlap:
            rec.reason = "overlap"
            continue
        in_fov = _popcount(packed & fov_packed)
        rec.fov_ratio = in_fov / total if total else 0.0
        if not rec.fov_ratio > cfg.t_fov:
            rec.reason = "fov"
            continue
        cls = int(thing_ids[int(np.argmax(preds[i].class_probs))])
        claim = np.unpackbits(packed, count=dims.voxel_count).view(bool).reshape(dims.shape)
        labels[claim] = cls
        ids[claim] = next_id
        free_packed &= ~packed
        rec.kept = True
        rec.instance_id = next_id
        rec.class_id = cls
        next_id += 1
    return SemanticGrid(dims, labels), InstanceGrid(dims, ids), records  # type: ignore[return-value]


def merge(
    bg: SemanticGrid,
    fov: FovMask,
    preds: list[MaskPrediction],
    cfg: MergeConfig,
    taxonomy: ClassTaxonomy,
) -> tuple[SemanticGrid, InstanceGrid]:
    """Merge predicted masks into the background scene.

    bg must contain no thing-class voxels (run zero_foreground first).
    Returns the merged semantic grid and the per-voxel instance ids, where
    kept masks get ids 1..K in descending score order.
    """
    sem, ids, _ = merge_with_log(bg, fov, preds, cfg, taxonomy)
    return sem, ids
