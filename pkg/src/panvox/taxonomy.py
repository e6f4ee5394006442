"""Class taxonomy: semantic ids, names, and panoptic kinds.

A taxonomy declares every label value a semantic grid may contain and sorts
each class into one of four kinds: "thing" (instance-forming foreground),
"stuff" (amorphous background), "free" (empty space), and "unknown"
(unobserved, excluded from evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

__all__ = ["CLASS_KINDS", "ClassEntry", "ClassTaxonomy", "semantic_kitti"]

CLASS_KINDS = ("thing", "stuff", "free", "unknown")


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    kind: str


class ClassTaxonomy:
    """Immutable registry of class entries with exactly one free class."""

    def __init__(self, entries: Iterable[ClassEntry]):
        self.entries = tuple(entries)
        seen_ids: set[int] = set()
        seen_names: set[str] = set()
        free_ids = []
        unknown_ids = []
        for e in self.entries:
            if e.kind not in CLASS_KINDS:
                raise ValueError(f"unknown class kind {e.kind!r} for {e.name!r}")
            if e.class_id < 0:
                raise ValueError(f"negative class id {e.class_id} for {e.name!r}")
            if e.class_id in seen_ids:
                raise ValueError(f"duplicate class id {e.class_id}")
            if e.name in seen_names:
                raise ValueError(f"duplicate class name {e.name!r}")
            seen_ids.add(e.class_id)
            seen_names.add(e.name)
            if e.kind == "free":
                free_ids.append(e.class_id)
            elif e.kind == "unknown":
                unknown_ids.append(e.class_id)
        if len(free_ids) != 1:
            raise ValueError(f"taxonomy needs exactly one free class, got {len(free_ids)}")
        if len(unknown_ids) > 1:
            raise ValueError("taxonomy allows at most one unknown class")
        self._by_id = {e.class_id: e for e in self.entries}
        self._by_name = {e.name: e for e in self.entries}
        self.free_id: int = free_ids[0]
        self.unknown_id: int | None = unknown_ids[0] if unknown_ids else None
        self.thing_ids: tuple[int, ...] = tuple(e.class_id for e in self.entries if e.kind == "thing")
        self.stuff_ids: tuple[int, ...] = tuple(e.class_id for e in self.entries if e.kind == "stuff")
        # thing + stuff in declaration order, the order used for score channels
        self.semantic_ids: tuple[int, ...] = tuple(
            e.class_id for e in self.entries if e.kind in ("thing", "stuff")
        )
        self._thing_index = {cid: i for i, cid in enumerate(self.thing_ids)}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ClassTaxonomy) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"ClassTaxonomy({len(self.entries)} classes, free={self.free_id})"

    def contains(self, class_id: int) -> bool:
        return class_id in self._by_id

    def kind_of(self, class_id: int) -> str:
        return self._by_id[class_id].kind

    def name_of(self, class_id: int) -> str:
        return self._by_id[class_id].name

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name].class_id
        except KeyError:
            raise ValueError(f"unknown class name {name!r}") from None

    def is_thing(self, class_id: int) -> bool:
        e = self._by_id.get(class_id)
        return e is not None and e.kind == "thing"

    def thing_index(self, class_id: int) -> int:
        """Position of a thing class inside foreground probability vectors."""
        try:
            return self._thing_index[class_id]
        except KeyError:
            raise ValueError(f"class id {class_id} is not a thing class") from None

    def prediction_channels(self) -> tuple[int, ...]:
        """Channel order for per-voxel class score vectors: free first, then semantics."""
        return (self.free_id,) + self.semantic_ids

    def to_dict(self) -> dict:
        return {
            "classes": [
                {"id": e.class_id, "name": e.name, "kind": e.kind} for e in self.entries
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClassTaxonomy":
        classes = data.get("classes")
        if not isinstance(classes, list):
            raise ValueError("taxonomy dict needs a 'classes' list")
        entries = []
        for c in classes:
            extra = set(c) - {"id", "name", "kind"}
            if extra:
                raise ValueError(f"unknown taxonomy entry key(s): {sorted(extra)}")
            entries.append(ClassEntry(int(c["id"]), str(c["name"]), str(c["kind"])))
        return cls(entries)


def semantic_kitti() -> ClassTaxonomy:
    """Default 21-label outdoor taxonomy: free 0, 19 semantic classes, unknown 255."""
    things = [
        (1, "car"),
        (2, "bicycle"),
        (3, "motorcycle"),
        (4, "truck"),
        (5, "other-vehicle"),
        (6, "person"),
        (7, "bicyclist"),
        (8, "motorcyclist"),
    ]
    stuff = [
        (9, "road"),
        (10, "parking"),
        (11, "sidewalk"),
        (12, "other-ground"),
        (13, "building"),
        (14, "fence"),
        (15, "vegetation"),
        (16, "trunk"),
        (17, "terrain"),
        (18, "pole"),
        (19, "traffic-sign"),
    ]
    entries = [ClassEntry(0, "free", "free")]
    entries += [ClassEntry(i, n, "thing") for i, n in things]
    entries += [ClassEntry(i, n, "stuff") for i, n in stuff]
    entries.append(ClassEntry(255, "unknown", "unknown"))
    return ClassTaxonomy(entries)
