"""Panoptic 3D scene completion toolkit.

Voxel-grid containers, mask-wise merging of instance predictions into a
completed scene, panoptic and semantic completion metrics, Euclidean
instance clustering, assignment costs and losses for mask set prediction,
and a minimal attention decoder stack, plus file formats and a CLI.
"""

from .taxonomy import CLASS_KINDS, ClassEntry, ClassTaxonomy, semantic_kitti
from .grids import (
    BinaryMask3D,
    DimensionMismatchError,
    FovMask,
    GridDims,
    InstanceGrid,
    MaskLogits3D,
    SemanticGrid,
    binarize,
    class_mask,
    flatten_index,
    mask_iou,
    unflatten_index,
    upsample_trilinear,
)
from .merging import (
    MaskPrediction,
    MergeConfig,
    MergeRecord,
    confidence_score,
    merge,
    merge_with_log,
    zero_foreground,
)
from .metrics import (
    CategoryMatches,
    CategoryScore,
    PanopticScores,
    Segment,
    SegmentMatchReport,
    extract_segments,
    greedy_match,
    panoptic_scores,
    ssc_class_ious,
    ssc_iou,
    ssc_miou,
)
from .clustering import (
    ClassClusterStats,
    ClusterParams,
    ball_offsets,
    euclidean_cluster,
    euclidean_cluster_with_stats,
)
from .matching import (
    LossWeights,
    dice_loss,
    downsample_majority,
    focal_loss,
    hungarian,
    instance_loss,
    matching_cost,
    weighted_cross_entropy,
)
from .decoder import (
    DecoderConfig,
    DecoderWeights,
    LayerOutput,
    LayerWeights,
    attention_layer,
    forward_stack,
    fuse_heads,
    init_reference_points,
    layer_predictions,
    positional_encoding,
)
from .formats import (
    FileFormatError,
    load_binary_mask,
    load_decoder_weights,
    load_fov_mask,
    load_instance_grid,
    load_mask_logits,
    load_mask_set,
    load_semantic_grid,
    save_decoder_weights,
    save_grid,
    save_mask_set,
)
from .config import MetricConfig, RunConfig, load_run_config

__version__ = "0.1.0"

__all__ = [
    "CLASS_KINDS",
    "ClassEntry",
    "ClassTaxonomy",
    "semantic_kitti",
    "BinaryMask3D",
    "DimensionMismatchError",
    "FovMask",
    "GridDims",
    "InstanceGrid",
    "MaskLogits3D",
    "SemanticGrid",
    "binarize",
    "class_mask",
    "flatten_index",
    "mask_iou",
    "unflatten_index",
    "upsample_trilinear",
    "MaskPrediction",
    "MergeConfig",
    "MergeRecord",
    "confidence_score",
    "merge",
    "merge_with_log",
    "zero_foreground",
    "CategoryMatches",
    "CategoryScore",
    "PanopticScores",
    "Segment",
    "SegmentMatchReport",
    "extract_segments",
    "greedy_match",
    "panoptic_scores",
    "ssc_class_ious",
    "ssc_iou",
    "ssc_miou",
    "ClassClusterStats",
    "ClusterParams",
    "ball_offsets",
    "euclidean_cluster",
    "euclidean_cluster_with_stats",
    "LossWeights",
    "dice_loss",
    "downsample_majority",
    "focal_loss",
    "hungarian",
    "instance_loss",
    "matching_cost",
    "weighted_cross_entropy",
    "DecoderConfig",
    "DecoderWeights",
    "LayerOutput",
    "LayerWeights",
    "attention_layer",
    "forward_stack",
    "fuse_heads",
    "init_reference_points",
    "layer_predictions",
    "positional_encoding",
    "FileFormatError",
    "load_binary_mask",
    "load_decoder_weights",
    "load_fov_mask",
    "load_instance_grid",
    "load_mask_logits",
    "load_mask_set",
    "load_semantic_grid",
    "save_decoder_weights",
    "save_grid",
    "save_mask_set",
    "MetricConfig",
    "RunConfig",
    "load_run_config",
    "__version__",
]
