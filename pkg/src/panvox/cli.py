"""Command line front end.

Subcommands cover the pipeline stages: merge mask predictions into a scene,
evaluate panoptic and semantic completion quality, cluster a semantic grid
into instances, match predictions against ground truth, and run the decoder
demo. Every command prints a JSON report (or writes it with --out) that
echoes the fully resolved configuration.

Exit codes: 0 on success, 1 for unusable inputs (bad arguments, missing or
malformed files, invalid values), 2 for grid or matrix shape mismatches.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .clustering import euclidean_cluster_with_stats
from .config import RunConfig, load_run_config
from .decoder import DecoderWeights, forward_stack, layer_predictions
from .formats import (
    FileFormatError,
    load_decoder_weights,
    load_fov_mask,
    load_instance_grid,
    load_mask_set,
    load_semantic_grid,
    save_decoder_weights,
    save_grid,
    save_mask_set,
)
from .grids import BinaryMask3D, DimensionMismatchError, FovMask, SemanticGrid
from .matching import downsample_majority, hungarian, matching_cost
from .merging import merge_with_log, zero_foreground
from .metrics import (
    extract_segments,
    greedy_match,
    panoptic_scores,
    ssc_class_ious,
    ssc_iou,
    ssc_miou,
)
from .taxonomy import ClassTaxonomy

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; keep 2 for shape
    # mismatches and report unusable command lines as 1 instead
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _validate_labels(sem: SemanticGrid, taxonomy: ClassTaxonomy, what: str) -> None:
    known = np.zeros(65536, bool)
    known[[e.class_id for e in taxonomy.entries]] = True
    bad = sem.labels[~known[sem.labels]]
    if bad.size:
        raise ValueError(
            f"{what} contains label {int(bad[0])} which is not in the taxonomy")


def _score_to_dict(score) -> dict:
    return {
        "prq": score.prq,
        "rsq": score.rsq,
        "rrq": score.rrq,
        "tp": score.tp,
        "fp": score.fp,
        "fn": score.fn,
        "iou_sum": score.iou_sum,
    }


def _ssc_section(pred: SemanticGrid, gt: SemanticGrid, cfg: RunConfig) -> dict:
    taxonomy = cfg.taxonomy
    if taxonomy.unknown_id is None:
        evaluable = gt.dims.voxel_count
    else:
        evaluable = int(np.count_nonzero(gt.labels != taxonomy.unknown_id))
    ious = ssc_class_ious(pred, gt, taxonomy)
    return {
        "evaluable_voxels": evaluable,
        "occupancy_iou": ssc_iou(pred, gt, taxonomy) if evaluable else None,
        "miou": ssc_miou(pred, gt, taxonomy,
                         skip_absent=cfg.metrics.skip_absent_classes),
        "class_iou": {taxonomy.name_of(c): v for c, v in ious.items()},
    }


def _remap_unclustered(gt_sem: SemanticGrid, gt_ids, taxonomy: ClassTaxonomy) -> SemanticGrid:
    """Thing voxels the ground truth left without an instance id turn unknown."""
    if taxonomy.unknown_id is None:
        raise ValueError(
            "unclustered_things_to_unknown needs a taxonomy with an unknown class")
    thing = np.zeros(65536, bool)
    thing[list(taxonomy.thing_ids)] = True
    labels = gt_sem.labels.copy()
    labels[thing[labels] & (gt_ids.ids == 0)] = taxonomy.unknown_id
    return SemanticGrid(gt_sem.dims, labels)


def cmd_merge(args) -> dict:
    cfg = load_run_config(args.config)
    taxonomy = cfg.taxonomy
    bg = load_semantic_grid(args.background)
    _validate_labels(bg, taxonomy, "background grid")
    fov = load_fov_mask(args.fov) if args.fov else FovMask.full(bg.dims)
    preds, _ = load_mask_set(args.masks)
    sem, ids, records = merge_with_log(
        zero_foreground(bg, taxonomy), fov, preds, cfg.merge, taxonomy)
    save_grid(args.out_semantic, sem)
    save_grid(args.out_instance, ids)
    return {
        "command": "merge",
        "config": cfg.to_dict(),
        "num_predictions": len(preds),
        "num_kept": sum(1 for r in records if r.kept),
        "num_discarded": sum(1 for r in records if not r.kept),
        "out_semantic": args.out_semantic,
        "out_instance": args.out_instance,
        "records": [r.to_dict() for r in records],
    }


def cmd_eval_panoptic(args) -> dict:
    cfg = load_run_config(args.config)
    taxonomy = cfg.taxonomy
    pred_sem = load_semantic_grid(args.pred_semantic)
    pred_ids = load_instance_grid(args.pred_instance)
    gt_sem = load_semantic_grid(args.gt_semantic)
    gt_ids = load_instance_grid(args.gt_instance)
    if cfg.metrics.unclustered_things_to_unknown:
        gt_sem = _remap_unclustered(gt_sem, gt_ids, taxonomy)
    ignore = None
    if taxonomy.unknown_id is not None:
        ignore = BinaryMask3D(gt_sem.dims, gt_sem.labels == taxonomy.unknown_id)
    eval_ids = cfg.metrics.resolve_eval_ids(taxonomy)
    pred_segs = extract_segments(pred_sem, pred_ids, taxonomy, eval_ids)
    gt_segs = extract_segments(gt_sem, gt_ids, taxonomy, eval_ids)
    match = greedy_match(pred_segs, gt_segs, cfg.metrics.iou_min, ignore, eval_ids)
    scores = panoptic_scores(match)
    return {
        "command": "eval-panoptic",
        "config": cfg.to_dict(),
        "panoptic": {
            "iou_min": cfg.metrics.iou_min,
            "classes": {
                taxonomy.name_of(c): _score_to_dict(scores.per_category[c])
                for c in eval_ids
            },
            "means": {
                "prq": scores.mean_prq,
                "rsq": scores.mean_rsq,
                "rrq": scores.mean_rrq,
            },
        },
        "ssc": _ssc_section(pred_sem, gt_sem, cfg),
    }


def cmd_eval_ssc(args) -> dict:
    cfg = load_run_config(args.config)
    pred = load_semantic_grid(args.pred)
    gt = load_semantic_grid(args.gt)
    return {
        "command": "eval-ssc",
        "config": cfg.to_dict(),
        "ssc": _ssc_section(pred, gt, cfg),
    }


def cmd_cluster(args) -> dict:
    cfg = load_run_config(args.config)
    taxonomy = cfg.taxonomy
    sem = load_semantic_grid(args.semantic)
    _validate_labels(sem, taxonomy, "semantic grid")
    ids, stats = euclidean_cluster_with_stats(sem, taxonomy, cfg.cluster)
    save_grid(args.out_instance, ids)
    return {
        "command": "cluster",
        "config": cfg.to_dict(),
        "out_instance": args.out_instance,
        "num_instances": int(ids.ids.max()),
        "classes": {
            taxonomy.name_of(st.class_id): {
                "kept": st.kept,
                "dropped_small": st.dropped_small,
                "dropped_large": st.dropped_large,
                "dropped_voxels": st.dropped_voxels,
            }
            for st in stats
        },
    }


def cmd_match(args) -> dict:
    cfg = load_run_config(args.config)
    taxonomy = cfg.taxonomy
    preds, mask_dims = load_mask_set(args.masks)
    gt_sem = load_semantic_grid(args.gt_semantic)
    gt_ids = load_instance_grid(args.gt_instance)
    if gt_sem.dims != gt_ids.dims:
        raise DimensionMismatchError(
            f"gt semantic dims {gt_sem.dims} != gt instance dims {gt_ids.dims}")
    flat_ids = gt_ids.ids.reshape(-1)
    flat_labels = gt_sem.labels.reshape(-1)
    gts = []
    gt_meta = []
    for uid in np.unique(flat_ids):
        if uid == 0:
            continue
        sel = np.flatnonzero(flat_ids == uid)
        label = int(flat_labels[sel[0]])
        cls_index = taxonomy.thing_index(label)
        full = BinaryMask3D(gt_sem.dims, gt_ids.ids == uid)
        gts.append((cls_index, downsample_majority(full, mask_dims)))
        gt_meta.append((int(uid), label))
    costs = matching_cost(preds, gts, cfg.loss)
    rows, cols = hungarian(costs)
    assignments = [
        {
            "prediction": int(r),
            "gt_instance_id": gt_meta[c][0],
            "class": taxonomy.name_of(gt_meta[c][1]),
            "cost": float(costs[r, c]),
        }
        for r, c in zip(rows, cols)
    ]
    return {
        "command": "match",
        "config": cfg.to_dict(),
        "num_predictions": len(preds),
        "num_ground_truth": len(gts),
        "total_cost": float(costs[rows, cols].sum()) if len(rows) else 0.0,
        "assignments": assignments,
    }


def cmd_decode_demo(args) -> dict:
    cfg = load_run_config(args.config)
    dcfg = cfg.decoder
    num_classes = len(cfg.taxonomy.thing_ids)
    if args.weights:
        weights = load_decoder_weights(args.weights)
        weights.validate_for(dcfg)
        if weights.num_classes != num_classes:
            raise DimensionMismatchError(
                f"weights score {weights.num_classes} classes, "
                f"taxonomy has {num_classes} thing classes")
    else:
        weights = DecoderWeights.random(dcfg, num_classes)
    if args.dump_weights:
        save_decoder_weights(args.dump_weights, weights)
    rng = np.random.default_rng(dcfg.seed + 1)
    features = rng.standard_normal(
        (dcfg.voxel_dims.voxel_count, dcfg.embed_dim)).astype(np.float32)
    outputs = forward_stack(dcfg, weights, features)
    final = layer_predictions(outputs[-1])
    save_mask_set(args.out_masks, final)
    return {
        "command": "decode-demo",
        "config": cfg.to_dict(),
        "num_masks": len(final),
        "num_layers": len(outputs),
        "out_masks": args.out_masks,
        "dumped_weights": args.dump_weights,
    }


def _build_parser() -> _Parser:
    parser = _Parser(prog="panvox",
                     description="Panoptic 3D scene completion tools")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    common.add_argument("--out", help="write the JSON report here instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", parents=[common],
                       help="fuse mask predictions into a background scene")
    p.add_argument("--background", required=True, help="semantic grid of the scene")
    p.add_argument("--fov", help="field-of-view mask (defaults to everything visible)")
    p.add_argument("--masks", required=True, help="mask prediction set")
    p.add_argument("--out-semantic", required=True)
    p.add_argument("--out-instance", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval-panoptic", parents=[common],
                       help="panoptic quality of a predicted scene")
    p.add_argument("--pred-semantic", required=True)
    p.add_argument("--pred-instance", required=True)
    p.add_argument("--gt-semantic", required=True)
    p.add_argument("--gt-instance", required=True)
    p.set_defaults(func=cmd_eval_panoptic)

    p = sub.add_parser("eval-ssc", parents=[common],
                       help="semantic completion quality of a predicted scene")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval_ssc)

    p = sub.add_parser("cluster", parents=[common],
                       help="split thing-class voxels into instances")
    p.add_argument("--semantic", required=True)
    p.add_argument("--out-instance", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("match", parents=[common],
                       help="assign mask predictions to ground-truth instances")
    p.add_argument("--masks", required=True)
    p.add_argument("--gt-semantic", required=True)
    p.add_argument("--gt-instance", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("decode-demo", parents=[common],
                       help="run the decoder on seeded features and save its masks")
    p.add_argument("--out-masks", required=True)
    p.add_argument("--weights", help="load decoder weights instead of seeding them")
    p.add_argument("--dump-weights", help="save the decoder weights used")
    p.set_defaults(func=cmd_decode_demo)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        report = args.func(args)
    except DimensionMismatchError as exc:
        print(f"panvox: error: {exc}", file=sys.stderr)
        return 2
    except (FileFormatError, FileNotFoundError, ValueError) as exc:
        print(f"panvox: error: {exc}", file=sys.stderr)
        return 1
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
