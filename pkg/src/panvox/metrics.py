"""Panoptic and semantic completion quality measures over voxel grids.

Thing classes form one segment per distinct nonzero instance id; each stuff
class forms at most one segment per grid. Matching is greedy on IoU within a
category, and voxels labeled unknown in the ground truth never count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import BinaryMask3D, DimensionMismatchError, InstanceGrid, SemanticGrid
from .taxonomy import ClassTaxonomy

__all__ = [
    "Segment",
    "CategoryMatches",
    "SegmentMatchReport",
    "CategoryScore",
    "PanopticScores",
    "extract_segments",
    "greedy_match",
    "panoptic_scores",
    "ssc_iou",
    "ssc_class_ious",
    "ssc_miou",
]


@dataclass
class Segment:
    """A voxel set of one category: thing instance or stuff region.

    voxels holds sorted flat indices (x-major). segment_key is the instance
    id for thing segments and the class id for stuff segments.
    """

    class_id: int
    segment_key: int
    voxels: np.ndarray

    def __post_init__(self):
        self.voxels = np.sort(np.asarray(self.voxels, dtype=np.int64))


@dataclass
class CategoryMatches:
    tp_pairs: list[tuple[Segment, Segment, float]] = field(default_factory=list)
    fp: int = 0
    fn: int = 0


@dataclass
class SegmentMatchReport:
    per_category: dict[int, CategoryMatches]
    categories: tuple[int, ...]
    iou_min: float = 0.2


@dataclass
class CategoryScore:
    prq: float | None
    rsq: float | None
    rrq: float | None
    tp: int
    fp: int
    fn: int
    iou_sum: float


@dataclass
class PanopticScores:
    per_category: dict[int, CategoryScore]
    mean_prq: float | None
    mean_rsq: float | None
    mean_rrq: float | None


def extract_segments(
    sem: SemanticGrid,
    ids: InstanceGrid,
    taxonomy: ClassTaxonomy,
    eval_classes: tuple[int, ...],
) -> list[Segment]:
    """Collect segments for the evaluated classes, in class then id order.

    Thing voxels with id 0 belong to no segment. Stuff classes yield one
    segment when present. Unknown-labeled voxels are never part of one.
    """
    if sem.dims != ids.dims:
        raise DimensionMismatchError(f"semantic dims {sem.dims} != instance dims {ids.dims}")
    labels = sem.labels.reshape(-1)
    inst = ids.ids.reshape(-1)
    out: list[Segment] = []
    for c in eval_classes:
        if not taxonomy.contains(c):
            raise ValueError(f"evaluated class id {c} is not in the taxonomy")
        sel = np.flatnonzero(labels == c)
        if sel.size == 0:
            continue
        if taxonomy.is_thing(c):
            iv = inst[sel]
            nz = iv > 0
            sel, iv = sel[nz], iv[nz]
            if sel.size == 0:
                continue
            order = np.argsort(iv, kind="stable")  # keeps voxel indices ascending per id
            sel, iv = sel[order], iv[order]
            uniq, starts = np.unique(iv, return_index=True)
            bounds = np.append(starts, sel.size)
            for k, seg_id in enumerate(uniq):
                out.append(Segment(c, int(seg_id), sel[bounds[k]:bounds[k + 1]]))
        else:
            out.append(Segment(c, c, sel))
    return out


def _filtered_voxels(seg: Segment, ignore_flat: np.ndarray | None) -> np.ndarray:
    if ignore_flat is None:
        return seg.voxels
    return seg.voxels[~ignore_flat[seg.voxels]]


def _intersection_size(a: np.ndarray, b: np.ndarray) -> int:
    """|a ∩ b| for sorted arrays of unique indices, without re-sorting."""
    if a.size > b.size:
        a, b = b, a
    if a.size == 0:
        return 0
    pos = np.searchsorted(b, a)
    ok = pos < b.size
    return int(np.count_nonzero(b[pos[ok]] == a[ok]))


def greedy_match(
    preds: list[Segment],
    gts: list[Segment],
    iou_min: float = 0.2,
    ignore: BinaryMask3D | None = None,
    categories: tuple[int, ...] | None = None,
) -> SegmentMatchReport:
    """Greedy one-to-one matching per category, best IoU first.

    Repeatedly accepts the globally best unmatched (pred, gt) pair of a
    category while its IoU >= iou_min; ties go to the lowest pred index,
    then the lowest gt index. Segments outside `categories` are dropped.
    """
    ignore_flat = ignore.bits.reshape(-1) if ignore is not None else None
    if categories is None:
        categories = tuple(sorted({s.class_id for s in preds} | {s.class_id for s in gts}))
    per_category: dict[int, CategoryMatches] = {}
    for c in categories:
        pc = [s for s in preds if s.class_id == c]
        gc = [s for s in gts if s.class_id == c]
        cm = CategoryMatches()
        per_category[c] = cm
        if not pc and not gc:
            continue
        pv = [_filtered_voxels(s, ignore_flat) for s in pc]
        gv = [_filtered_voxels(s, ignore_flat) for s in gc]
        iou = np.zeros((len(pc), len(gc)))
        for i, a in enumerate(pv):
            for j, b in enumerate(gv):
                inter = _intersection_size(a, b)
                union = a.size + b.size - inter
                iou[i, j] = inter / union if union else 0.0
        matched_p = np.zeros(len(pc), bool)
        matched_g = np.zeros(len(gc), bool)
        if iou.size:
            work = iou.copy()
            while True:
                flat = int(np.argmax(work))  # row-major argmax = lowest (i, j) on ties
                i, j = divmod(flat, work.shape[1])
                if work[i, j] < iou_min:
                    break
                cm.tp_pairs.append((pc[i], gc[j], float(iou[i, j])))
                matched_p[i] = True
                matched_g[j] = True
                work[i, :] = -1.0
                work[:, j] = -1.0
        cm.fp = int(np.count_nonzero(~matched_p))
        cm.fn = int(np.count_nonzero(~matched_g))
    return SegmentMatchReport(per_category, categories, iou_min)


def panoptic_scores(report: SegmentMatchReport) -> PanopticScores:
    """Recognition-quality decomposition per category plus unweighted means.

    For a category: rsq = mean IoU of true positives (0 when none),
    rrq = tp / (tp + fp/2 + fn/2), prq = iou_sum / (tp + fp/2 + fn/2),
    so prq = rsq * rrq. Categories whose denominator is 0 (no segments on
    either side) score null and are excluded from the means.
    """
    per_category: dict[int, CategoryScore] = {}
    present: list[CategoryScore] = []
    for c in report.categories:
        cm = report.per_category.get(c, CategoryMatches())
        tp = len(cm.tp_pairs)
        iou_sum = float(sum(iou for _, _, iou in cm.tp_pairs))
        denom = tp + 0.5 * cm.fp + 0.5 * cm.fn
        if denom == 0:
            score = CategoryScore(None, None, None, 0, 0, 0, 0.0)
        else:
            rsq = iou_sum / tp if tp else 0.0
            rrq = tp / denom
            prq = iou_sum / denom
            score = CategoryScore(prq, rsq, rrq, tp, cm.fp, cm.fn, iou_sum)
            present.append(score)
        per_category[c] = score
    if present:
        mean_prq = float(np.mean([s.prq for s in present]))
        mean_rsq = float(np.mean([s.rsq for s in present]))
        mean_rrq = float(np.mean([s.rrq for s in present]))
    else:
        mean_prq = mean_rsq = mean_rrq = None
    return PanopticScores(per_category, mean_prq, mean_rsq, mean_rrq)


def _semantic_lut(taxonomy: ClassTaxonomy) -> tuple[np.ndarray, int]:
    """Label -> dense channel lut; semantic classes get 0..K-1, the rest K."""
    sem_ids = taxonomy.semantic_ids
    k = len(sem_ids)
    lut = np.full(65536, k, np.int64)
    for idx, cid in enumerate(sem_ids):
        lut[cid] = idx
    return lut, k


def _valid_mask(gt: SemanticGrid, taxonomy: ClassTaxonomy) -> np.ndarray:
    if taxonomy.unknown_id is None:
        return np.ones(gt.dims.shape, bool)
    return gt.labels != taxonomy.unknown_id


def ssc_iou(pred: SemanticGrid, gt: SemanticGrid, taxonomy: ClassTaxonomy) -> float:
    """Binary occupancy IoU. Occupied means any semantic (non-free, non-unknown)
    label; voxels unknown in the ground truth are excluded on both sides."""
    if pred.dims != gt.dims:
        raise DimensionMismatchError(f"pred dims {pred.dims} != gt dims {gt.dims}")
    lut, k = _semantic_lut(taxonomy)
    valid = _valid_mask(gt, taxonomy)
    pred_occ = (lut[pred.labels] < k) & valid
    gt_occ = (lut[gt.labels] < k) & valid
    inter = int(np.count_nonzero(pred_occ & gt_occ))
    union = int(np.count_nonzero(pred_occ)) + int(np.count_nonzero(gt_occ)) - inter
    return inter / union if union else 0.0


def _confusion(pred: SemanticGrid, gt: SemanticGrid, taxonomy: ClassTaxonomy) -> np.ndarray:
    if pred.dims != gt.dims:
        raise DimensionMismatchError(f"pred dims {pred.dims} != gt dims {gt.dims}")
    lut, k = _semantic_lut(taxonomy)
    valid = _valid_mask(gt, taxonomy)
    p = lut[pred.labels[valid]]
    g = lut[gt.labels[valid]]
    conf = np.bincount(p * (k + 1) + g, minlength=(k + 1) * (k + 1))
    return conf.reshape(k + 1, k + 1)


def ssc_class_ious(
    pred: SemanticGrid, gt: SemanticGrid, taxonomy: ClassTaxonomy
) -> dict[int, float | None]:
    """Per-class IoU over semantic classes; None when a class is absent from
    both grids (empty union) within the evaluable region."""
    conf = _confusion(pred, gt, taxonomy)
    out: dict[int, float | None] = {}
    for idx, cid in enumerate(taxonomy.semantic_ids):
        tp = int(conf[idx, idx])
        union = int(conf[idx, :].sum()) + int(conf[:, idx].sum()) - tp
        out[cid] = tp / union if union else None
    return out


def ssc_miou(
    pred: SemanticGrid,
    gt: SemanticGrid,
    taxonomy: ClassTaxonomy,
    skip_absent: bool = False,
) -> float | None:
    """Mean IoU over semantic classes.

    Classes absent from both grids count as 0 by default; with skip_absent
    they are excluded from the mean. Returns None when nothing is evaluable.
    """
    ious = ssc_class_ious(pred, gt, taxonomy)
    if skip_absent:
        vals = [v for v in ious.values() if v is not None]
    else:
        vals = [0.0 if v is None else v for v in ious.values()]
    if not vals or not np.count_nonzero(_valid_mask(gt, taxonomy)):
        return None
    return float(np.mean(vals))
