"""Deterministic synthetic backends.

These make the full pipeline exactly verifiable at desk scale:

- FlatRenderer paints each label with its palette color.
- ExactSegmenter inverts FlatRenderer bit-exactly (colors are unique).
- BackgroundFillInpainter fills removed regions from their surroundings
  with a fixed, hand-traceable rule.
- FaultInjectingCaptioner captions flat-rendered scenes from a template
  grammar and can corrupt captions on purpose, logging every fault, so
  detector precision and recall are measurable against known ground
  truth.
"""

from __future__ import annotations

import hashlib
import random
import threading
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from ..core import (
    BACKGROUND_LABEL,
    CONN4,
    BinaryMask,
    CategoryPalette,
    SemanticMap,
    candidates_from_map,
    component_census,
    split_instances,
)
from ..errors import PaletteMismatch, ShapeError
from ..lang import article, number_word, pluralize
from .base import (
    CaptionService,
    FaultPolicy,
    Inpainter,
    MaskToImage,
    SegmentationResult,
    Segmenter,
    TranslationParams,
    check_image,
)

FAULT_KINDS = ("omit", "misclassify", "miscount")


def render_flat(semantic_map: SemanticMap) -> np.ndarray:
    """Paint each label with its palette color; label 0 paints black."""
    return semantic_map.palette.color_lut()[semantic_map.labels]


def image_to_map(image: np.ndarray, palette: CategoryPalette) -> SemanticMap:
    """Exact color -> label inversion of a flat-rendered image."""
    a = check_image(image)
    packed = (
        a[..., 0].astype(np.int32) * 65536
        + a[..., 1].astype(np.int32) * 256
        + a[..., 2].astype(np.int32)
    )
    lut = {0: BACKGROUND_LABEL}
    for e in palette.entries:
        lut[e.color[0] * 65536 + e.color[1] * 256 + e.color[2]] = e.index
    uniq, inverse = np.unique(packed, return_inverse=True)
    indices = np.empty(len(uniq), dtype=np.uint8)
    for i, value in enumerate(uniq):
        if int(value) not in lut:
            r, g, b = value >> 16, (value >> 8) & 255, value & 255
            raise PaletteMismatch(f"pixel color {(int(r), int(g), int(b))} not in palette")
        indices[i] = lut[int(value)]
    return SemanticMap(indices[inverse].reshape(a.shape[:2]), palette)


class FlatRenderer(MaskToImage):
    """Mask-to-image stage that ignores diffusion knobs and paints flat."""

    def translate(self, semantic_map: SemanticMap, params: TranslationParams) -> list[np.ndarray]:
        image = render_flat(semantic_map)
        return [image.copy() for _ in range(params.samples_per_map)]


class ExactSegmenter(Segmenter):
    """Inverse of FlatRenderer; instances are 4-connected components."""

    def __init__(self, palette: CategoryPalette):
        self.palette = palette

    def segment(self, image: np.ndarray) -> SegmentationResult:
        semantic_map = image_to_map(image, self.palette)
        return SegmentationResult(
            map=semantic_map,
            instances=tuple(split_instances(semantic_map)),
            candidates=candidates_from_map(semantic_map),
        )


class BackgroundFillInpainter(Inpainter):
    """Fills each 4-connected removed region with one surrounding label.

    Fill rule: the most frequent label among the pixels just outside the
    region (the 8-neighborhood of the region's border), resolved once per
    connected region; ties break toward the lowest label index; a region
    with no outside neighbors fills with background.
    """

    def __init__(self, palette: CategoryPalette):
        self.palette = palette

    def inpaint(self, image: np.ndarray, region: BinaryMask) -> np.ndarray:
        a = check_image(image)
        if region.bits.shape != a.shape[:2]:
            raise ShapeError(
                f"region shape {region.bits.shape} differs from image shape {a.shape[:2]}"
            )
        out = a.copy()
        if region.empty:
            return out
        labels = image_to_map(a, self.palette).labels.copy()
        comp, n = ndimage.label(region.bits, structure=CONN4)
        ring_structure = np.ones((3, 3), dtype=bool)
        for c in range(1, n + 1):
            comp_mask = comp == c
            ring = ndimage.binary_dilation(comp_mask, structure=ring_structure)
            ring &= ~region.bits
            if ring.any():
                counts = np.bincount(labels[ring])
                fill = int(np.argmax(counts))  # argmax takes the lowest index on ties
            else:
                fill = BACKGROUND_LABEL
            labels[comp_mask] = fill
        lut = self.palette.color_lut()
        out[region.bits] = lut[labels[region.bits]]
        return out


# ---------------------------------------------------------------------------
# synthetic captioning


@dataclass(frozen=True)
class FaultRecord:
    """One deliberate caption corruption, exact enough to replay."""

    kind: str  # omit | misclassify | miscount
    category: str
    substitute: Optional[str] = None
    true_count: Optional[int] = None
    stated_count: Optional[int] = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")

    def to_json_obj(self) -> dict:
        obj = {"kind": self.kind, "category": self.category}
        if self.substitute is not None:
            obj["substitute"] = self.substitute
        if self.true_count is not None:
            obj["true_count"] = self.true_count
        if self.stated_count is not None:
            obj["stated_count"] = self.stated_count
        return obj

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "FaultRecord":
        return cls(
            kind=obj["kind"],
            category=obj["category"],
            substitute=obj.get("substitute"),
            true_count=obj.get("true_count"),
            stated_count=obj.get("stated_count"),
        )


def _phrase(name: str, count: int) -> str:
    if count == 1:
        return f"{article(name)} {name}"
    return f"{number_word(count)} {pluralize(name)}"


def render_caption(items: Sequence[tuple[str, int]]) -> str:
    """Fixed template grammar over (category, count) items."""
    if not items:
        return "a picture of a scene"
    return "a picture of " + " and ".join(_phrase(n, c) for n, c in items)


def _derive_rng(seed: int, payload: bytes) -> random.Random:
    digest = hashlib.sha256(str(seed).encode("ascii") + b":" + payload).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _choose_kind(policy: FaultPolicy, rng: random.Random) -> Optional[str]:
    if policy.force_cycle:
        enabled = [k for k, p in zip(FAULT_KINDS, (policy.p_omit, policy.p_misclassify, policy.p_miscount)) if p > 0]
        return rng.choice(enabled or list(FAULT_KINDS))
    if rng.random() < policy.p_omit:
        return "omit"
    if rng.random() < policy.p_misclassify:
        return "misclassify"
    if rng.random() < policy.p_miscount:
        return "miscount"
    return None


def _apply_fault(
    items: list[tuple[str, int]], kind: Optional[str], policy: FaultPolicy, rng: random.Random
) -> list[FaultRecord]:
    if kind is None or not items:
        return []
    if kind == "omit":
        i = rng.randrange(len(items))
        name, count = items.pop(i)
        return [FaultRecord("omit", name, true_count=count)]
    if kind == "misclassify":
        present = {n for n, _ in items}
        eligible = [
            i
            for i, (n, _) in enumerate(items)
            if policy.confusion_table.get(n) and policy.confusion_table[n] not in present
        ]
        if not eligible:
            return []
        i = rng.choice(eligible)
        name, count = items[i]
        substitute = policy.confusion_table[name]
        items[i] = (substitute, count)
        return [FaultRecord("misclassify", name, substitute=substitute, true_count=count)]
    if kind == "miscount":
        i = rng.randrange(len(items))
        name, count = items[i]
        items[i] = (name, count + 1)
        return [FaultRecord("miscount", name, true_count=count, stated_count=count + 1)]
    raise ValueError(f"unknown fault kind {kind!r}")


def caption_synthetic(
    semantic_map: SemanticMap, policy: FaultPolicy, forced_kind: Optional[str] = None
) -> tuple[str, list[FaultRecord]]:
    """Caption a layout from its per-category census, optionally corrupted.

    Deterministic: the rng derives from (policy.rng_seed, map bytes), so
    the same map and policy always give the same caption and fault log.
    """
    census = component_census(semantic_map)
    items = [(name, census[name]) for name in sorted(census)]
    rng = _derive_rng(policy.rng_seed, semantic_map.labels.tobytes() + bytes(semantic_map.labels.shape))
    kind = forced_kind if forced_kind is not None else (None if policy.inert else _choose_kind(policy, rng))
    records = _apply_fault(items, kind, policy, rng)
    return render_caption(items), records


def replay_caption(census: Mapping[str, int], records: Sequence[FaultRecord]) -> str:
    """Re-render the caption a census plus a fault log must have produced."""
    items = [(name, census[name]) for name in sorted(census)]
    for rec in records:
        idx = next(i for i, (n, _) in enumerate(items) if n == rec.category)
        if rec.kind == "omit":
            items.pop(idx)
        elif rec.kind == "misclassify":
            items[idx] = (rec.substitute, items[idx][1])
        elif rec.kind == "miscount":
            items[idx] = (rec.category, rec.stated_count)
    return render_caption(items)


class FaultInjectingCaptioner(CaptionService):
    """Captions flat-rendered scenes, injecting faults per its policy.

    Pure given (image, policy) except in force_cycle mode, where a
    thread-locked call counter steps through the enabled fault kinds so a
    batch gets an even mix.
    """

    def __init__(self, palette: CategoryPalette, policy: FaultPolicy = FaultPolicy(), system_id: str = "synthetic:exact"):
        policy.validate_against(palette)
        self.palette = palette
        self.policy = policy
        self.system_id = system_id
        self._lock = threading.Lock()
        self._calls = 0

    def caption(self, image: np.ndarray) -> str:
        return self.caption_with_faults(image)[0]

    def caption_with_faults(self, image: np.ndarray) -> tuple[str, list[FaultRecord]]:
        semantic_map = image_to_map(image, self.palette)
        forced = None
        if self.policy.force_cycle:
            with self._lock:
                n = self._calls
                self._calls += 1
            enabled = [
                k
                for k, p in zip(
                    FAULT_KINDS,
                    (self.policy.p_omit, self.policy.p_misclassify, self.policy.p_miscount),
                )
                if p > 0
            ] or list(FAULT_KINDS)
            forced = enabled[n % len(enabled)]
        return caption_synthetic(semantic_map, self.policy, forced_kind=forced)
