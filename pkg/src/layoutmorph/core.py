"""Core value types: palettes, masks, boxes, semantic maps, object instances.

All types are immutable after construction (arrays are flagged read-only),
so they can be shared freely across worker threads. Coordinate convention:
x = column, y = row, origin at the top-left, bounding boxes inclusive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyMask, PaletteMismatch, ShapeError

# 4-connectivity structure for connected-component labelling.
CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# Label 0 / color (0,0,0) are reserved for unlabeled background.
BACKGROUND_LABEL = 0
BACKGROUND_COLOR = (0, 0, 0)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PaletteEntry:
    name: str
    index: int
    color: tuple[int, int, int]


@dataclass(frozen=True)
class CategoryPalette:
    """Category name <-> label index <-> display color mapping.

    Names are unique, lowercase, singular; indices are unique in 1..255;
    colors are unique and distinct from the reserved background color so
    that color->label inversion is exact.
    """

    entries: tuple[PaletteEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        names = [e.name for e in self.entries]
        indices = [e.index for e in self.entries]
        colors = [tuple(e.color) for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("palette category names must be unique")
        for n in names:
            if not n or n != n.lower():
                raise ValueError(f"palette name {n!r} must be lowercase and non-empty")
        if len(set(indices)) != len(indices):
            raise ValueError("palette label indices must be unique")
        for i in indices:
            if not 1 <= i <= 255:
                raise ValueError(f"label index {i} outside 1..255 (0 is background)")
        if len(set(colors)) != len(colors):
            raise ValueError("palette display colors must be unique")
        if BACKGROUND_COLOR in colors:
            raise ValueError(f"{BACKGROUND_COLOR} is reserved for the background")
        object.__setattr__(self, "_by_name", {e.name: e for e in self.entries})
        object.__setattr__(self, "_by_index", {e.index: e for e in self.entries})
        object.__setattr__(self, "_by_color", {tuple(e.color): e for e in self.entries})

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, tuple[int, int, int]]]) -> "CategoryPalette":
        """Build a palette assigning indices 1..n in the given order."""
        entries = [PaletteEntry(name, i + 1, tuple(color)) for i, (name, color) in enumerate(pairs)]
        return cls(tuple(entries))

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def index_of(self, name: str) -> int:
        try:
            return self._by_name[name].index
        except KeyError:
            raise PaletteMismatch(f"unknown category {name!r}") from None

    def name_of(self, index: int) -> str:
        try:
            return self._by_index[index].name
        except KeyError:
            raise PaletteMismatch(f"unknown label index {index}") from None

    def color_of(self, name: str) -> tuple[int, int, int]:
        return self._by_name[name].color

    def label_of_color(self, color: tuple[int, int, int]) -> int:
        """Exact color -> label inversion; background color maps to 0."""
        color = tuple(int(c) for c in color)
        if color == BACKGROUND_COLOR:
            return BACKGROUND_LABEL
        entry = self._by_color.get(color)
        if entry is None:
            raise PaletteMismatch(f"color {color} not in palette")
        return entry.index

    def color_lut(self) -> np.ndarray:
        """(256, 3) uint8 lookup table from label index to display color."""
        lut = np.zeros((256, 3), dtype=np.uint8)
        lut[BACKGROUND_LABEL] = BACKGROUND_COLOR
        for e in self.entries:
            lut[e.index] = e.color
        return lut

    def to_json_obj(self) -> dict:
        return {
            "palette": [
                {"name": e.name, "index": e.index, "color": list(e.color)} for e in self.entries
            ]
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "CategoryPalette":
        entries = tuple(
            PaletteEntry(d["name"], int(d["index"]), tuple(int(c) for c in d["color"]))
            for d in obj["palette"]
        )
        return cls(entries)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A width x height bit grid, stored row-major as a bool array."""

    bits: np.ndarray  # (height, width) bool

    def __post_init__(self):
        a = np.asarray(self.bits)
        if a.dtype != bool:
            a = a.astype(bool)
        if a.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {a.shape}")
        object.__setattr__(self, "bits", _freeze(np.ascontiguousarray(a)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def empty(self) -> bool:
        return not self.bits.any()

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        self._check_same_shape(other)
        return BinaryMask(self.bits & other.bits)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        self._check_same_shape(other)
        return BinaryMask(self.bits | other.bits)

    def __sub__(self, other: "BinaryMask") -> "BinaryMask":
        self._check_same_shape(other)
        return BinaryMask(self.bits & ~other.bits)

    def _check_same_shape(self, other: "BinaryMask"):
        if self.bits.shape != other.bits.shape:
            raise ShapeError(f"mask shapes differ: {self.bits.shape} vs {other.bits.shape}")


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel bounds of a region."""

    x_min: int
    x_max: int
    y_min: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")
        if min(self.x_min, self.y_min) < 0:
            raise ValueError(f"negative coordinate in {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def contains_point(self, x: int, y: int) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


def tight_bbox(mask: BinaryMask) -> BoundingBox:
    """Minimal inclusive box containing every set bit of ``mask``."""
    if mask.empty:
        raise EmptyMask("cannot compute bounding box of an empty mask")
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    return BoundingBox(
        x_min=int(cols[0]), x_max=int(cols[-1]), y_min=int(rows[0]), y_max=int(rows[-1])
    )


@dataclass(frozen=True, eq=False)
class SemanticMap:
    """A labeled pixel grid; each pixel carries a palette label index or 0."""

    labels: np.ndarray  # (height, width) uint8
    palette: CategoryPalette

    def __post_init__(self):
        a = np.asarray(self.labels)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ShapeError(f"semantic map must be 2-D and non-empty, got {a.shape}")
        a = np.ascontiguousarray(a.astype(np.uint8))
        present = set(np.unique(a).tolist()) - {BACKGROUND_LABEL}
        known = {e.index for e in self.palette.entries}
        if not present <= known:
            raise PaletteMismatch(f"labels {sorted(present - known)} not in palette")
        object.__setattr__(self, "labels", _freeze(a))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticMap):
            return NotImplemented
        return (
            self.labels.shape == other.labels.shape
            and bool(np.array_equal(self.labels, other.labels))
            and self.palette == other.palette
        )

    def category_mask(self, name: str) -> BinaryMask:
        return BinaryMask(self.labels == self.palette.index_of(name))


@dataclass(frozen=True)
class ObjectInstance:
    """One target object: category, canvas-sized mask, tight box, stack order."""

    instance_id: str
    category: str
    mask: BinaryMask
    bbox: BoundingBox
    z_order: int

    def __post_init__(self):
        if self.mask.empty:
            raise EmptyMask(f"instance {self.instance_id!r} has an empty mask")
        if tight_bbox(self.mask) != self.bbox:
            raise ValueError(f"bbox of {self.instance_id!r} is not tight for its mask")

    @classmethod
    def from_mask(cls, instance_id: str, category: str, mask: BinaryMask, z_order: int) -> "ObjectInstance":
        return cls(instance_id, category, mask, tight_bbox(mask), z_order)


@dataclass(frozen=True)
class CandidateSet:
    """Per-category object counts; the quantitative ground truth."""

    counts: Mapping[str, int]

    def __post_init__(self):
        counts = dict(self.counts)
        for cat, n in counts.items():
            if n < 1:
                raise ValueError(f"candidate count for {cat!r} must be >= 1, got {n}")
        object.__setattr__(self, "counts", counts)

    def validate_against(self, palette: CategoryPalette):
        for cat in self.counts:
            if cat not in palette:
                raise PaletteMismatch(f"candidate category {cat!r} not in palette")

    def __contains__(self, category: str) -> bool:
        return category in self.counts

    def __getitem__(self, category: str) -> int:
        return self.counts[category]

    def __len__(self) -> int:
        return len(self.counts)

    def items(self):
        return self.counts.items()

    def sorted_categories(self) -> list[str]:
        return sorted(self.counts)


@dataclass(frozen=True)
class SceneRecord:
    """One seed image with its segmentation-derived ground truth.

    ``semantic_map``/``instances``/``candidates`` may be None for corpora
    without annotation masks; the segmentation backend fills them at run
    time.
    """

    seed_id: str
    image: np.ndarray  # (h, w, 3) uint8
    semantic_map: Optional[SemanticMap]
    instances: tuple[ObjectInstance, ...]
    candidates: Optional[CandidateSet]
    gt_captions: tuple[str, ...]

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.uint8)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ShapeError(f"scene image must be (h, w, 3), got {img.shape}")
        object.__setattr__(self, "image", _freeze(np.ascontiguousarray(img)))
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "gt_captions", tuple(self.gt_captions))
        if self.candidates is not None and self.instances:
            per_cat: dict[str, int] = {}
            for inst in self.instances:
                per_cat[inst.category] = per_cat.get(inst.category, 0) + 1
            if per_cat != dict(self.candidates.counts):
                raise ValueError(
                    f"instance census {per_cat} disagrees with candidates "
                    f"{dict(self.candidates.counts)} for seed {self.seed_id!r}"
                )


# ---------------------------------------------------------------------------
# Operations


def split_instances(semantic_map: SemanticMap) -> list[ObjectInstance]:
    """One instance per 4-connected component of each nonzero label.

    z_order follows the ascending row-major scan position of each
    component's first pixel, so the result is deterministic.
    """
    found: list[tuple[int, int, str, np.ndarray]] = []  # (first_row, first_col, cat, mask)
    labels = semantic_map.labels
    for index in np.unique(labels):
        if index == BACKGROUND_LABEL:
            continue
        category = semantic_map.palette.name_of(int(index))
        lab, n = ndimage.label(labels == index, structure=CONN4)
        for comp in range(1, n + 1):
            comp_mask = lab == comp
            flat = int(np.flatnonzero(comp_mask.ravel())[0])
            found.append((flat // labels.shape[1], flat % labels.shape[1], category, comp_mask))
    found.sort(key=lambda t: (t[0], t[1]))
    return [
        ObjectInstance.from_mask(f"obj{z:03d}", cat, BinaryMask(m), z)
        for z, (_, _, cat, m) in enumerate(found)
    ]


def component_census(semantic_map: SemanticMap) -> dict[str, int]:
    """Number of 4-connected components per category present in the map."""
    census: dict[str, int] = {}
    labels = semantic_map.labels
    for index in np.unique(labels):
        if index == BACKGROUND_LABEL:
            continue
        _, n = ndimage.label(labels == index, structure=CONN4)
        census[semantic_map.palette.name_of(int(index))] = int(n)
    return census


def candidates_from_map(semantic_map: SemanticMap) -> CandidateSet:
    return CandidateSet(component_census(semantic_map))


# ---------------------------------------------------------------------------
# Serialization: binary portable graymap (P5) plus a JSON palette sidecar.


def write_p5_bytes(grid: np.ndarray) -> bytes:
    """Encode a (h, w) uint8 grid as a binary P5 graymap."""
    a = np.ascontiguousarray(np.asarray(grid, dtype=np.uint8))
    if a.ndim != 2:
        raise ShapeError(f"P5 payload must be 2-D, got {a.shape}")
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    return header + a.tobytes()


def read_p5_bytes(data: bytes) -> np.ndarray:
    """Decode a binary P5 graymap into a (h, w) uint8 array."""
    if not data.startswith(b"P5"):
        raise ValueError("not a P5 graymap")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment to end of line
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported P5 maxval {maxval}")
    raw = data[pos : pos + width * height]
    if len(raw) != width * height:
        raise ValueError("truncated P5 payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width)


def map_to_p5(semantic_map: SemanticMap) -> bytes:
    return write_p5_bytes(semantic_map.labels)


def map_from_p5(data: bytes, palette: CategoryPalette) -> SemanticMap:
    return SemanticMap(read_p5_bytes(data), palette)


def mask_to_p5(mask: BinaryMask) -> bytes:
    return write_p5_bytes(mask.bits.astype(np.uint8) * 255)


def mask_from_p5(data: bytes) -> BinaryMask:
    grid = read_p5_bytes(data)
    bad = set(np.unique(grid)) - {0, 255}
    if bad:
        raise ValueError(f"mask P5 carries non-binary values {sorted(bad)}")
    return BinaryMask(grid == 255)


def save_map(semantic_map: SemanticMap, path) -> None:
    """Write ``<path>`` as P5 and ``<path>.json`` with the palette sidecar."""
    import pathlib

    path = pathlib.Path(path)
    path.write_bytes(map_to_p5(semantic_map))
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(semantic_map.palette.to_json_obj(), indent=2)
    )


def load_map(path) -> SemanticMap:
    import pathlib

    path = pathlib.Path(path)
    palette = CategoryPalette.from_json_obj(
        json.loads(path.with_suffix(path.suffix + ".json").read_text())
    )
    return map_from_p5(path.read_bytes(), palette)
