"""File formats: voxel grids, mask-prediction sets, decoder weights.

Grids are stored as a raw little-endian payload (x-major, C order of the
(h, w, d) cube) next to a JSON sidecar manifest ``<payload>.json`` that names
the kind and grid dims. The sidecar makes headerless label dumps usable
as-is: point a hand-written manifest at an existing ``.bin`` and the typed
loaders accept it.

Mask sets are a single binary file (magic ``VPMS``) holding per-mask class
probabilities, optional scores, and full mask logits. Decoder weights are a
flat float32 payload plus a JSON manifest listing tensor names and shapes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .decoder import DecoderWeights, LayerWeights
from .grids import (
    BinaryMask3D,
    FovMask,
    GridDims,
    InstanceGrid,
    MaskLogits3D,
    SemanticGrid,
)
from .merging import MaskPrediction

__all__ = [
    "FileFormatError",
    "save_grid",
    "load_semantic_grid",
    "load_instance_grid",
    "load_fov_mask",
    "load_binary_mask",
    "load_mask_logits",
    "save_mask_set",
    "load_mask_set",
    "save_decoder_weights",
    "load_decoder_weights",
]

MASK_SET_MAGIC = b"VPMS"
MASK_SET_VERSION = 1
_HEADER = struct.Struct("<4sHIHIIIfB")

_GRID_DTYPES = {
    "semantic": np.dtype("<u2"),
    "instance": np.dtype("<u4"),
    "bool": np.dtype("|u1"),
    "logits": np.dtype("<f4"),
}


class FileFormatError(ValueError):
    """A file or its manifest does not match the expected layout."""


def _manifest_path(path) -> Path:
    return Path(str(path) + ".json")


def _read_manifest(path) -> tuple[str, GridDims]:
    mpath = _manifest_path(path)
    try:
        text = mpath.read_text()
    except FileNotFoundError:
        if not Path(path).exists():
            raise FileNotFoundError(f"{path}: no such grid file") from None
        raise FileNotFoundError(
            f"{mpath}: grid payload {path} has no manifest sidecar") from None
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{mpath}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise FileFormatError(f"{mpath}: manifest must be a JSON object")
    # "taxonomy" is an optional free-form reference for downstream tooling
    extra = set(manifest) - {"kind", "dims", "taxonomy"}
    if extra:
        raise FileFormatError(f"{mpath}: unknown manifest keys {sorted(extra)}")
    try:
        kind = manifest["kind"]
        dims = GridDims.from_dict(manifest["dims"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{mpath}: {exc}") from exc
    if kind not in _GRID_DTYPES:
        raise FileFormatError(f"{mpath}: unknown grid kind {kind!r}")
    return kind, dims


def _load_payload(path, expected_kind: str) -> tuple[GridDims, np.ndarray]:
    kind, dims = _read_manifest(path)
    if kind != expected_kind:
        raise FileFormatError(f"{path}: kind {kind!r}, expected {expected_kind!r}")
    raw = np.fromfile(path, dtype=_GRID_DTYPES[kind])
    if raw.size != dims.voxel_count:
        raise FileFormatError(
            f"{path}: payload has {raw.size} voxels, dims imply {dims.voxel_count}")
    return dims, raw.reshape(dims.shape)


def save_grid(path, grid) -> None:
    """Write a grid payload and its JSON sidecar manifest."""
    if isinstance(grid, SemanticGrid):
        kind, data = "semantic", grid.labels
    elif isinstance(grid, InstanceGrid):
        kind, data = "instance", grid.ids
    elif isinstance(grid, (FovMask, BinaryMask3D)):
        kind, data = "bool", grid.bits
    elif isinstance(grid, MaskLogits3D):
        kind, data = "logits", grid.values
    else:
        raise TypeError(f"cannot save object of type {type(grid).__name__}")
    np.ascontiguousarray(data).astype(_GRID_DTYPES[kind]).tofile(path)
    manifest = {"kind": kind, "dims": grid.dims.to_dict()}
    _manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def load_semantic_grid(path) -> SemanticGrid:
    dims, raw = _load_payload(path, "semantic")
    return SemanticGrid(dims, raw.astype(np.uint16, copy=False))


def load_instance_grid(path) -> InstanceGrid:
    dims, raw = _load_payload(path, "instance")
    return InstanceGrid(dims, raw.astype(np.uint32, copy=False))


def _load_bits(path) -> tuple[GridDims, np.ndarray]:
    dims, raw = _load_payload(path, "bool")
    bad = (raw > 1).sum()
    if bad:
        raise FileFormatError(f"{path}: {bad} byte(s) outside {{0, 1}} in boolean grid")
    return dims, raw.view(np.bool_)


def load_fov_mask(path) -> FovMask:
    dims, bits = _load_bits(path)
    return FovMask(dims, bits)


def load_binary_mask(path) -> BinaryMask3D:
    dims, bits = _load_bits(path)
    return BinaryMask3D(dims, bits)


def load_mask_logits(path) -> MaskLogits3D:
    dims, raw = _load_payload(path, "logits")
    if not np.isfinite(raw).all():
        raise FileFormatError(f"{path}: non-finite values in logits grid")
    return MaskLogits3D(dims, raw)


def save_mask_set(path, preds: list[MaskPrediction],
                  dims: GridDims | None = None,
                  num_classes: int | None = None) -> None:
    """Write a mask prediction set.

    dims and num_classes are taken from the predictions when present; both
    must be given explicitly to write an empty set. Scores must be present
    on all predictions or on none.
    """
    if preds:
        dims = preds[0].logits.dims
        num_classes = preds[0].class_probs.shape[0]
    elif dims is None or num_classes is None:
        raise ValueError("empty mask set needs explicit dims and num_classes")
    with_scores = sum(p.score is not None for p in preds)
    if with_scores not in (0, len(preds)):
        raise ValueError("mask set mixes scored and unscored predictions")
    has_scores = bool(preds) and with_scores == len(preds)
    for p in preds:
        if p.logits.dims != dims:
            raise ValueError("mask set mixes grid dims")
        if p.class_probs.shape[0] != num_classes:
            raise ValueError("mask set mixes class counts")
    header = _HEADER.pack(MASK_SET_MAGIC, MASK_SET_VERSION, len(preds), num_classes,
                          dims.h, dims.w, dims.d, dims.resolution_m, int(has_scores))
    with open(path, "wb") as fh:
        fh.write(header)
        for p in preds:
            fh.write(p.class_probs.astype("<f4").tobytes())
            if has_scores:
                fh.write(struct.pack("<f", p.score))
            fh.write(np.ascontiguousarray(p.logits.values).astype("<f4").tobytes())


def load_mask_set(path) -> tuple[list[MaskPrediction], GridDims]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, count, num_classes, h, w, d, res, has_scores = \
        _HEADER.unpack_from(blob)
    if magic != MASK_SET_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}, not a mask set file")
    if version != MASK_SET_VERSION:
        raise FileFormatError(f"{path}: unsupported mask set version {version}")
    if has_scores not in (0, 1):
        raise FileFormatError(f"{path}: has_scores flag must be 0 or 1")
    dims = GridDims(h, w, d, res)
    record = 4 * (num_classes + has_scores + dims.voxel_count)
    expected = _HEADER.size + count * record
    if len(blob) != expected:
        raise FileFormatError(
            f"{path}: {len(blob)} bytes, {count} records imply {expected}")
    preds = []
    off = _HEADER.size
    for i in range(count):
        probs = np.frombuffer(blob, "<f4", num_classes, off).astype(np.float64)
        off += 4 * num_classes
        score = None
        if has_scores:
            (score,) = struct.unpack_from("<f", blob, off)
            off += 4
        logits = np.frombuffer(blob, "<f4", dims.voxel_count, off)
        off += 4 * dims.voxel_count
        try:
            pred = MaskPrediction(
                class_probs=probs,
                logits=MaskLogits3D(dims, logits.reshape(dims.shape).copy()),
                score=score,
            )
        except ValueError as exc:
            raise FileFormatError(f"{path}: record {i}: {exc}") from exc
        preds.append(pred)
    return preds, dims


_BASE_TENSORS = ("reference_points", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")
_LAYER_TENSORS = ("key_w", "key_b", "value_w", "value_b",
                  "fusion_w", "fusion_b", "cls_w", "cls_b")


def _weight_tensors(weights: DecoderWeights) -> list[tuple[str, np.ndarray]]:
    out = [(name, getattr(weights, name)) for name in _BASE_TENSORS]
    for i, lw in enumerate(weights.layers):
        for field in _LAYER_TENSORS:
            value = getattr(lw, field)
            out.append((f"layers.{i}.{field}", np.asarray(value, np.float32)))
    return out


def save_decoder_weights(path, weights: DecoderWeights) -> None:
    """Concatenated float32 payload plus a manifest of tensor names/shapes."""
    tensors = _weight_tensors(weights)
    with open(path, "wb") as fh:
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr).astype("<f4").tobytes())
    manifest = {
        "kind": "decoder-weights",
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    _manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def load_decoder_weights(path) -> DecoderWeights:
    mpath = _manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{mpath}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or set(manifest) != {"kind", "tensors"}:
        raise FileFormatError(f"{mpath}: expected keys 'kind' and 'tensors'")
    if manifest["kind"] != "decoder-weights":
        raise FileFormatError(f"{mpath}: kind {manifest['kind']!r} is not decoder-weights")
    raw = np.fromfile(path, dtype="<f4")
    arrays: dict[str, np.ndarray] = {}
    off = 0
    for entry in manifest["tensors"]:
        try:
            name, shape = entry["name"], tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"{mpath}: bad tensor entry {entry!r}") from exc
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if off + size > raw.size:
            raise FileFormatError(f"{path}: payload too short for tensor {name!r}")
        if name in arrays:
            raise FileFormatError(f"{mpath}: duplicate tensor {name!r}")
        arrays[name] = raw[off:off + size].reshape(shape).copy()
        off += size
    if off != raw.size:
        raise FileFormatError(f"{path}: {raw.size - off} trailing float(s) in payload")

    layer_count = sum(1 for n in arrays if n.endswith(".key_w"))
    expected = list(_BASE_TENSORS)
    for i in range(layer_count):
        expected.extend(f"layers.{i}.{f}" for f in _LAYER_TENSORS)
    missing = [n for n in expected if n not in arrays]
    extra = [n for n in arrays if n not in expected]
    if missing or extra:
        raise FileFormatError(
            f"{mpath}: tensor names off (missing {missing}, unexpected {extra})")
    if layer_count == 0:
        raise FileFormatError(f"{mpath}: no decoder layers in weights file")

    layers = []
    for i in range(layer_count):
        grab = {f: arrays[f"layers.{i}.{f}"] for f in _LAYER_TENSORS}
        grab["fusion_b"] = float(grab["fusion_b"].reshape(-1)[0])
        layers.append(LayerWeights(**grab))
    base = {n: arrays[n] for n in _BASE_TENSORS}
    return DecoderWeights(layers=layers, **base)
