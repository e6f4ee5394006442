"""Connected-component instance ids for thing-class voxels.

Two voxels of the same thing class belong to the same cluster when their
center distance is at most the class search radius (in voxel units).
Components outside the per-class size window are traces or merges of
distinct objects and are dropped back to id 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import InstanceGrid, SemanticGrid
from .taxonomy import ClassTaxonomy

__all__ = [
    "ClusterParams",
    "ClassClusterStats",
    "ball_offsets",
    "euclidean_cluster",
    "euclidean_cluster_with_stats",
]

_VEHICLE_NAMES = ("car", "truck", "other-vehicle")
_DEFAULT_MAX = {
    "car": 2000,
    "truck": 5000,
    "other-vehicle": 5000,
    "person": 1000,
    "bicyclist": 1000,
    "motorcyclist": 1000,
}


@dataclass
class ClusterParams:
    """Per-class clustering knobs, keyed by class id.

    Classes missing from the dicts fall back to default_radius and
    default_max (None means uncapped). Components with fewer than
    min_cluster_voxels or more than the class cap are dropped.
    """

    radius_voxels: dict[int, float] = field(default_factory=dict)
    max_cluster_voxels: dict[int, int | None] = field(default_factory=dict)
    min_cluster_voxels: int = 1
    default_radius: float = 3.0
    default_max: int | None = None

    def __post_init__(self):
        if self.min_cluster_voxels < 1:
            raise ValueError("min_cluster_voxels must be >= 1")
        for cid, r in self.radius_voxels.items():
            if not r > 0:
                raise ValueError(f"radius for class {cid} must be positive")

    def radius_for(self, class_id: int) -> float:
        return self.radius_voxels.get(class_id, self.default_radius)

    def max_for(self, class_id: int) -> int | None:
        return self.max_cluster_voxels.get(class_id, self.default_max)

    @classmethod
    def for_taxonomy(cls, taxonomy: ClassTaxonomy) -> "ClusterParams":
        """Search radius 2 for vehicles, 3 otherwise; size caps per class."""
        radius: dict[int, float] = {}
        caps: dict[int, int | None] = {}
        for cid in taxonomy.thing_ids:
            name = taxonomy.name_of(cid)
            radius[cid] = 2.0 if name in _VEHICLE_NAMES else 3.0
            if name in _DEFAULT_MAX:
                caps[cid] = _DEFAULT_MAX[name]
        return cls(radius_voxels=radius, max_cluster_voxels=caps)


@dataclass
class ClassClusterStats:
    class_id: int
    kept: int = 0
    dropped_small: int = 0
    dropped_large: int = 0
    dropped_voxels: int = 0


def ball_offsets(radius: float) -> np.ndarray:
    """Integer offsets (dx, dy, dz) with 0 < ||offset|| <= radius.

    radius 2 yields 32 neighbors, radius 3 yields 122.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    r = int(np.floor(radius))
    axis = np.arange(-r, r + 1)
    dx, dy, dz = np.meshgrid(axis, axis, axis, indexing="ij")
    d2 = dx * dx + dy * dy + dz * dz
    keep = (d2 > 0) & (d2 <= radius * radius)
    return np.stack([dx[keep], dy[keep], dz[keep]], axis=1)


def euclidean_cluster_with_stats(
    sem: SemanticGrid,
    taxonomy: ClassTaxonomy,
    params: ClusterParams,
) -> tuple[InstanceGrid, list[ClassClusterStats]]:
    """euclidean_cluster plus per-class keep/drop counts."""
    shape = sem.dims.shape
    labels = sem.labels
    inst = np.zeros(shape, np.uint32)
    visited = np.zeros(shape, bool)
    offsets_cache: dict[float, np.ndarray] = {}
    stats: list[ClassClusterStats] = []
    next_id = 1
    for entry in taxonomy.entries:
        if entry.kind != "thing":
            continue
        cid = entry.class_id
        cls_flat = (labels == cid).reshape(-1)
        seeds = np.flatnonzero(cls_flat)
        if seeds.size == 0:
            continue
        radius = params.radius_for(cid)
        offsets = offsets_cache.get(radius)
        if offsets is None:
            offsets = offsets_cache[radius] = ball_offsets(radius)
        cap = params.max_for(cid)
        st = ClassClusterStats(cid)
        stats.append(st)
        visited_flat = visited.reshape(-1)
        for seed in seeds:
            if visited_flat[seed]:
                continue
            component = _flood(seed, cls_flat, visited_flat, offsets, shape)
            size = component.size
            if size < params.min_cluster_voxels:
                st.dropped_small += 1
                st.dropped_voxels += size
            elif cap is not None and size > cap:
                st.dropped_large += 1
                st.dropped_voxels += size
            else:
                inst.reshape(-1)[component] = next_id
                next_id += 1
                st.kept += 1
    return InstanceGrid(sem.dims, inst), stats


def _flood(seed: int, cls_flat: np.ndarray, visited_flat: np.ndarray,
           offsets: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Collect the component of `seed`, breadth-first with vectorized waves."""
    visited_flat[seed] = True
    frontier = np.array([seed], np.int64)
    parts = [frontier]
    while frontier.size:
        coords = np.stack(np.unravel_index(frontier, shape), axis=1)
        cand = coords[:, None, :] + offsets[None, :, :]
        cand = cand.reshape(-1, 3)
        ok = (
            (cand[:, 0] >= 0) & (cand[:, 0] < shape[0])
            & (cand[:, 1] >= 0) & (cand[:, 1] < shape[1])
            & (cand[:, 2] >= 0) & (cand[:, 2] < shape[2])
        )
        cand = cand[ok]
        flat = np.ravel_multi_index((cand[:, 0], cand[:, 1], cand[:, 2]), shape)
        flat = flat[cls_flat[flat] & ~visited_flat[flat]]
        frontier = np.unique(flat)
        visited_flat[frontier] = True
        if frontier.size:
            parts.append(frontier)
    return np.concatenate(parts)


def euclidean_cluster(
    sem: SemanticGrid,
    taxonomy: ClassTaxonomy,
    params: ClusterParams,
) -> InstanceGrid:
    """Cluster each thing class independently into instance ids.

    Surviving components get ids 1..K globally, assigned class by class in
    taxonomy order and, inside a class, in ascending order of each
    component's first (seed) flat voxel index. Dropped components keep
    their semantic label but stay at id 0.
    """
    grid, _ = euclidean_cluster_with_stats(sem, taxonomy, params)
    return grid
