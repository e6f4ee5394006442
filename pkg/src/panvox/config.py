"""Run configuration: one JSON document configuring every pipeline stage.

Unknown keys anywhere in the document are rejected so typos fail loudly.
Class-keyed settings (cluster radii, size caps, evaluated classes) use class
names in JSON and are resolved against the taxonomy when parsed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .clustering import ClusterParams
from .decoder import DecoderConfig
from .grids import GridDims
from .matching import LossWeights
from .merging import MergeConfig
from .taxonomy import ClassTaxonomy, semantic_kitti

__all__ = ["MetricConfig", "RunConfig", "load_run_config"]


def _check_keys(data: dict, allowed: set[str], where: str) -> None:
    if not isinstance(data, dict):
        raise ValueError(f"{where} must be a JSON object")
    extra = set(data) - allowed
    if extra:
        raise ValueError(f"unknown {where} key(s): {sorted(extra)}")


@dataclass
class MetricConfig:
    """Evaluation knobs: match threshold, evaluated classes (by name), and
    how to treat thing voxels the ground truth never clustered."""

    iou_min: float = 0.2
    eval_classes: tuple[str, ...] = ("car", "truck", "other-vehicle", "road")
    unclustered_things_to_unknown: bool = False
    skip_absent_classes: bool = False

    def __post_init__(self):
        if not 0.0 <= self.iou_min <= 1.0:
            raise ValueError(f"iou_min must be within [0, 1], got {self.iou_min}")
        self.eval_classes = tuple(self.eval_classes)

    def resolve_eval_ids(self, taxonomy: ClassTaxonomy) -> tuple[int, ...]:
        return tuple(taxonomy.id_of(name) for name in self.eval_classes)

    def to_dict(self) -> dict:
        return {
            "iou_min": self.iou_min,
            "eval_classes": list(self.eval_classes),
            "unclustered_things_to_unknown": self.unclustered_things_to_unknown,
            "skip_absent_classes": self.skip_absent_classes,
        }


def _taxonomy_from(value) -> ClassTaxonomy:
    if value is None or value == "semantic-kitti":
        return semantic_kitti()
    if isinstance(value, str):
        raise ValueError(f"unknown taxonomy name {value!r} (try 'semantic-kitti')")
    return ClassTaxonomy.from_dict(value)


def _class_keyed(data: dict, taxonomy: ClassTaxonomy, where: str,
                 cast) -> dict[int, object]:
    if not isinstance(data, dict):
        raise ValueError(f"{where} must map class names to values")
    out = {}
    for name, value in data.items():
        out[taxonomy.id_of(name)] = None if value is None else cast(value)
    return out


def _cluster_from(data: dict | None, taxonomy: ClassTaxonomy) -> ClusterParams:
    base = ClusterParams.for_taxonomy(taxonomy)
    if data is None:
        return base
    _check_keys(data, {"radius_voxels", "max_cluster_voxels", "min_cluster_voxels",
                       "default_radius", "default_max"}, "cluster")
    radius = dict(base.radius_voxels)
    radius.update(_class_keyed(data.get("radius_voxels", {}), taxonomy,
                               "cluster.radius_voxels", float))
    caps = dict(base.max_cluster_voxels)
    caps.update(_class_keyed(data.get("max_cluster_voxels", {}), taxonomy,
                             "cluster.max_cluster_voxels", int))
    default_max = data.get("default_max", base.default_max)
    return ClusterParams(
        radius_voxels=radius,
        max_cluster_voxels=caps,
        min_cluster_voxels=int(data.get("min_cluster_voxels", base.min_cluster_voxels)),
        default_radius=float(data.get("default_radius", base.default_radius)),
        default_max=None if default_max is None else int(default_max),
    )


def _cluster_to_dict(params: ClusterParams, taxonomy: ClassTaxonomy) -> dict:
    def key(cid: int) -> str:
        return taxonomy.name_of(cid) if taxonomy.contains(cid) else str(cid)

    return {
        "radius_voxels": {key(c): r for c, r in sorted(params.radius_voxels.items())},
        "max_cluster_voxels": {key(c): m for c, m in sorted(params.max_cluster_voxels.items())},
        "min_cluster_voxels": params.min_cluster_voxels,
        "default_radius": params.default_radius,
        "default_max": params.default_max,
    }


def _merge_from(data: dict | None) -> MergeConfig:
    if data is None:
        return MergeConfig()
    _check_keys(data, {"t_q", "t_overlap", "t_fov", "alpha", "beta", "mask_threshold"},
                "merge")
    return MergeConfig(**{k: float(v) for k, v in data.items()})


def _loss_from(data: dict | None) -> LossWeights:
    if data is None:
        return LossWeights()
    _check_keys(data, {"lambda_cls", "lambda_mask", "num_decoder_layers",
                       "focal_gamma", "focal_alpha"}, "loss")
    kwargs = dict(data)
    if "num_decoder_layers" in kwargs:
        kwargs["num_decoder_layers"] = int(kwargs["num_decoder_layers"])
    return LossWeights(**kwargs)


def _metrics_from(data: dict | None, taxonomy: ClassTaxonomy) -> MetricConfig:
    if data is None:
        mc = MetricConfig()
    else:
        _check_keys(data, {"iou_min", "eval_classes", "unclustered_things_to_unknown",
                           "skip_absent_classes"}, "metrics")
        kwargs = dict(data)
        if "eval_classes" in kwargs:
            kwargs["eval_classes"] = tuple(str(n) for n in kwargs["eval_classes"])
        mc = MetricConfig(**kwargs)
    mc.resolve_eval_ids(taxonomy)  # fail fast on unknown class names
    return mc


def _decoder_from(data: dict | None) -> DecoderConfig:
    if data is None:
        return DecoderConfig()
    _check_keys(data, {"num_queries", "num_heads", "num_layers", "embed_dim",
                       "pos_dim", "voxel_dims", "seed", "sigmoid_masks"}, "decoder")
    kwargs = dict(data)
    if "voxel_dims" in kwargs:
        kwargs["voxel_dims"] = GridDims.from_dict(kwargs["voxel_dims"])
    return DecoderConfig(**kwargs)


@dataclass
class RunConfig:
    """Everything the pipeline stages need, resolved against one taxonomy."""

    taxonomy: ClassTaxonomy
    merge: MergeConfig
    cluster: ClusterParams
    loss: LossWeights
    metrics: MetricConfig
    decoder: DecoderConfig

    @classmethod
    def default(cls) -> "RunConfig":
        taxonomy = semantic_kitti()
        return cls(
            taxonomy=taxonomy,
            merge=MergeConfig(),
            cluster=ClusterParams.for_taxonomy(taxonomy),
            loss=LossWeights(),
            metrics=MetricConfig(),
            decoder=DecoderConfig(),
        )

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Parse a config document. Sections left out keep their defaults;
        inside a given section, per-class entries override the defaults."""
        _check_keys(data, {"taxonomy", "merge", "cluster", "loss", "metrics",
                           "decoder"}, "config")
        taxonomy = _taxonomy_from(data.get("taxonomy"))
        return cls(
            taxonomy=taxonomy,
            merge=_merge_from(data.get("merge")),
            cluster=_cluster_from(data.get("cluster"), taxonomy),
            loss=_loss_from(data.get("loss")),
            metrics=_metrics_from(data.get("metrics"), taxonomy),
            decoder=_decoder_from(data.get("decoder")),
        )

    def to_dict(self) -> dict:
        """Fully resolved echo of the configuration, suitable for reports."""
        return {
            "taxonomy": self.taxonomy.to_dict(),
            "merge": self.merge.to_dict(),
            "cluster": _cluster_to_dict(self.cluster, self.taxonomy),
            "loss": self.loss.to_dict(),
            "metrics": self.metrics.to_dict(),
            "decoder": self.decoder.to_dict(),
        }


def load_run_config(path=None) -> RunConfig:
    """Defaults when path is None, otherwise parse the JSON file strictly."""
    if path is None:
        return RunConfig.default()
    return RunConfig.from_dict(json.loads(Path(path).read_text()))
