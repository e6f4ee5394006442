"""Dense voxel grid containers and resampling primitives.

Grids are numpy arrays of shape (h, w, d) in x-major layout: the flat index
of voxel (x, y, z) is x*w*d + y*d + z, which is plain C order. h counts
voxels along the forward x axis, w along the lateral y axis, d along the
vertical z axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "GridDims",
    "SemanticGrid",
    "InstanceGrid",
    "BinaryMask3D",
    "MaskLogits3D",
    "FovMask",
    "flatten_index",
    "unflatten_index",
    "upsample_trilinear",
    "binarize",
    "mask_iou",
    "class_mask",
]


class DimensionMismatchError(ValueError):
    """Grid shapes are incompatible for the requested operation."""


@dataclass(frozen=True)
class GridDims:
    """Voxel grid extents plus the metric edge length of one voxel."""

    h: int = 256
    w: int = 256
    d: int = 32
    resolution_m: float = 0.2

    def __post_init__(self):
        if min(self.h, self.w, self.d) < 1:
            raise ValueError(f"grid dims must be >= 1, got {(self.h, self.w, self.d)}")
        if not self.resolution_m > 0:
            raise ValueError(f"resolution_m must be positive, got {self.resolution_m}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.h, self.w, self.d)

    @property
    def voxel_count(self) -> int:
        return self.h * self.w * self.d

    def downscaled(self, factor: int) -> "GridDims":
        if factor < 1 or any(n % factor for n in self.shape):
            raise DimensionMismatchError(f"{self.shape} is not divisible by factor {factor}")
        return GridDims(self.h // factor, self.w // factor, self.d // factor,
                        self.resolution_m * factor)

    def quarter(self) -> "GridDims":
        return self.downscaled(4)

    def upscale_factors(self, target: "GridDims") -> tuple[int, int, int]:
        """Per-axis integer factors mapping these dims onto target dims."""
        factors = []
        for src_n, dst_n in zip(self.shape, target.shape):
            if dst_n % src_n:
                raise DimensionMismatchError(
                    f"target shape {target.shape} is not an integer multiple of {self.shape}")
            factors.append(dst_n // src_n)
        return tuple(factors)

    def to_dict(self) -> dict:
        return {"h": self.h, "w": self.w, "d": self.d, "resolution_m": self.resolution_m}

    @classmethod
    def from_dict(cls, data: dict) -> "GridDims":
        extra = set(data) - {"h", "w", "d", "resolution_m"}
        if extra:
            raise ValueError(f"unknown dims key(s): {sorted(extra)}")
        return cls(int(data["h"]), int(data["w"]), int(data["d"]),
                   float(data.get("resolution_m", 0.2)))


def _as_grid_array(values, dims: GridDims, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.shape != dims.shape:
        raise DimensionMismatchError(f"array shape {arr.shape} != grid shape {dims.shape}")
    return np.ascontiguousarray(arr)


@dataclass
class SemanticGrid:
    """Per-voxel semantic class labels, uint16."""

    dims: GridDims
    labels: np.ndarray

    def __post_init__(self):
        self.labels = _as_grid_array(self.labels, self.dims, np.uint16)

    def copy(self) -> "SemanticGrid":
        return SemanticGrid(self.dims, self.labels.copy())

    @classmethod
    def filled(cls, dims: GridDims, label: int) -> "SemanticGrid":
        return cls(dims, np.full(dims.shape, label, np.uint16))


@dataclass
class InstanceGrid:
    """Per-voxel instance ids, uint32. 0 means no instance."""

    dims: GridDims
    ids: np.ndarray

    def __post_init__(self):
        self.ids = _as_grid_array(self.ids, self.dims, np.uint32)

    def copy(self) -> "InstanceGrid":
        return InstanceGrid(self.dims, self.ids.copy())

    @classmethod
    def empty(cls, dims: GridDims) -> "InstanceGrid":
        return cls(dims, np.zeros(dims.shape, np.uint32))


@dataclass
class BinaryMask3D:
    """Dense boolean occupancy mask."""

    dims: GridDims
    bits: np.ndarray

    def __post_init__(self):
        self.bits = _as_grid_array(self.bits, self.dims, bool)

    @property
    def voxel_count(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass
class FovMask:
    """Boolean field-of-view mask: True where the sensor can observe."""

    dims: GridDims
    bits: np.ndarray

    def __post_init__(self):
        self.bits = _as_grid_array(self.bits, self.dims, bool)

    @classmethod
    def full(cls, dims: GridDims) -> "FovMask":
        return cls(dims, np.ones(dims.shape, bool))


@dataclass
class MaskLogits3D:
    """Real-valued mask logits, float32, usually at quarter scale. All finite."""

    dims: GridDims
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_grid_array(self.values, self.dims, np.float32)
        if not np.isfinite(self.values).all():
            raise ValueError("mask logits must be finite")


def flatten_index(dims: GridDims, x, y, z):
    """Flat index of voxel (x, y, z) in x-major layout. Accepts arrays."""
    x = np.asarray(x)
    y = np.asarray(y)
    z = np.asarray(z)
    if np.any((x < 0) | (x >= dims.h) | (y < 0) | (y >= dims.w) | (z < 0) | (z >= dims.d)):
        raise ValueError("voxel coordinate out of range")
    return (x * dims.w + y) * dims.d + z


def unflatten_index(dims: GridDims, index):
    """Inverse of flatten_index, returns (x, y, z). Accepts arrays."""
    index = np.asarray(index)
    if np.any((index < 0) | (index >= dims.voxel_count)):
        raise ValueError("flat index out of range")
    x, rem = np.divmod(index, dims.w * dims.d)
    y, z = np.divmod(rem, dims.d)
    return x, y, z


def _phase_offsets(factor: int) -> list[float]:
    # output cell r of each factor-sized group sits at source offset (r+0.5)/f - 0.5
    return [(r + 0.5) / factor - 0.5 for r in range(factor)]


def _expand_axis(src: np.ndarray, factor: int, axis: int, out: np.ndarray) -> None:
    """Linear interpolation along one axis by an integer factor, edge-clamped.

    Output cell centers sample the source at (i + 0.5)/factor - 0.5 (the
    cell-center convention of mainstream resize operators). Written so each
    output phase is a constant-weight blend of two neighboring source slices,
    which keeps the inner loop free of index gathers. The float op order here
    is the single source of truth; the fused merge path mirrors it exactly.
    """
    v = np.moveaxis(src, axis, 0)
    o = np.moveaxis(out, axis, 0)
    if factor == 1:
        o[...] = v
        return
    delta = v[1:] - v[:-1]
    for r, c in enumerate(_phase_offsets(factor)):
        dst = o[r::factor]
        if c < 0.0:
            # clamped at the low edge: first output cell copies the first slice
            np.multiply(delta, np.float32(1.0 + c), out=dst[1:])
            dst[1:] += v[:-1]
            dst[0] = v[0]
        else:
            np.multiply(delta, np.float32(c), out=dst[:-1])
            dst[:-1] += v[:-1]
            dst[-1] = v[-1]


def upsample_trilinear(src: MaskLogits3D, target: GridDims) -> MaskLogits3D:
    """Trilinear upsampling to an integer multiple of the source dims per axis.

    Uses cell-center sampling (align-corners-false) with edge clamping.
    Output is bounded by the source min/max and reproduces constants exactly.
    """
    fx, fy, fz = src.dims.upscale_factors(target)
    h, w, d = src.dims.shape
    # z first, then y, then x, so the heaviest pass writes contiguous x slabs
    a1 = np.empty((h, w, d * fz), np.float32)
    _expand_axis(src.values, fz, 2, a1)
    a2 = np.empty((h, w * fy, d * fz), np.float32)
    _expand_axis(a1, fy, 1, a2)
    out = np.empty(target.shape, np.float32)
    _expand_axis(a2, fx, 0, out)
    return MaskLogits3D(target, out)


def binarize(mask: MaskLogits3D, threshold: float = 0.25) -> BinaryMask3D:
    """Strict comparison: a voxel is set iff its logit exceeds the threshold."""
    return BinaryMask3D(mask.dims, mask.values > threshold)


def mask_iou(a: BinaryMask3D, b: BinaryMask3D, ignore: BinaryMask3D | None = None) -> float:
    """Intersection over union of two masks, 0.0 when the union is empty."""
    if a.dims != b.dims:
        raise DimensionMismatchError(f"mask dims differ: {a.dims} vs {b.dims}")
    abits, bbits = a.bits, b.bits
    if ignore is not None:
        if ignore.dims != a.dims:
            raise DimensionMismatchError(f"ignore dims differ: {ignore.dims} vs {a.dims}")
        valid = ~ignore.bits
        abits = abits & valid
        bbits = bbits & valid
    inter = int(np.count_nonzero(abits & bbits))
    union = int(np.count_nonzero(abits)) + int(np.count_nonzero(bbits)) - inter
    return inter / union if union else 0.0


def class_mask(grid: SemanticGrid, class_id: int, taxonomy) -> BinaryMask3D:
    """Boolean mask of voxels labeled with one taxonomy class."""
    if not taxonomy.contains(class_id):
        raise ValueError(f"class id {class_id} is not in the taxonomy")
    return BinaryMask3D(grid.dims, grid.labels == class_id)
