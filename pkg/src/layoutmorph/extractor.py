"""Mask extraction: recover a complete, distinct mask per target object.

For each target, every OTHER target is excised (its pixels plus a small
dilation ring) and repaired by the inpainter; re-segmenting the repaired
image then yields the target's mask free of its neighbors. A final
background pass removes all targets at once, leaving the repaired
background image and its label map.

The ops take the scene's instance list explicitly: instance ids name
pixels only through their recorded masks.
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .backends.base import Inpainter, Segmenter
from .core import (
    CONN4,
    BinaryMask,
    ObjectInstance,
    SceneRecord,
    SemanticMap,
    mask_to_p5,
)
from .errors import ExtractionFailed, ShapeError, UnknownTarget


@dataclass(frozen=True)
class ExtractionConfig:
    dilation_kernel: int = 3
    dilation_iterations: int = 2
    max_resegment_retries: int = 2

    def __post_init__(self):
        if self.dilation_kernel < 1 or self.dilation_kernel % 2 == 0:
            raise ValueError(f"dilation_kernel must be odd and >= 1, got {self.dilation_kernel}")
        if self.dilation_iterations < 0:
            raise ValueError("dilation_iterations must be >= 0")
        if self.max_resegment_retries < 0:
            raise ValueError("max_resegment_retries must be >= 0")

    def to_json_obj(self) -> dict:
        return {
            "dilation_kernel": self.dilation_kernel,
            "dilation_iterations": self.dilation_iterations,
            "max_resegment_retries": self.max_resegment_retries,
        }

    @classmethod
    def from_json_obj(cls, obj) -> "ExtractionConfig":
        return cls(
            dilation_kernel=int(obj.get("dilation_kernel", 3)),
            dilation_iterations=int(obj.get("dilation_iterations", 2)),
            max_resegment_retries=int(obj.get("max_resegment_retries", 2)),
        )


@dataclass(frozen=True)
class ExtractionResult:
    singles: Mapping[str, BinaryMask]
    background_map: SemanticMap
    background_image: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "singles", dict(self.singles))
        for instance_id, mask in self.singles.items():
            if mask.empty:
                raise ValueError(f"extracted mask for {instance_id!r} is empty")


def _index_instances(instances: Sequence[ObjectInstance]) -> dict[str, ObjectInstance]:
    return {inst.instance_id: inst for inst in instances}


def build_inpaint_mask(
    semantic_map: SemanticMap,
    instances: Sequence[ObjectInstance],
    targets: Iterable[str],
    cur: Optional[str] = None,
    background_pass: bool = False,
) -> BinaryMask:
    """Pixels to excise: every target's pixels, minus cur's own (unless
    this is the background pass, which excises all targets)."""
    targets = set(targets)
    if not targets:
        raise ValueError("targets must be non-empty")
    by_id = _index_instances(instances)
    missing = targets - set(by_id)
    if missing:
        raise UnknownTarget(f"target ids {sorted(missing)} not among instances")
    if not background_pass:
        if cur is None or cur not in targets:
            raise UnknownTarget(f"cur {cur!r} is not a target")
    bits = np.zeros((semantic_map.height, semantic_map.width), dtype=bool)
    for instance_id in targets:
        if not background_pass and instance_id == cur:
            continue
        inst = by_id[instance_id]
        if inst.mask.bits.shape != bits.shape:
            raise ShapeError(
                f"instance {instance_id!r} mask shape {inst.mask.bits.shape} "
                f"does not match map {bits.shape}"
            )
        bits |= inst.mask.bits
    return BinaryMask(bits)


def dilate_backfill(
    region: BinaryMask, protect: Optional[BinaryMask], config: ExtractionConfig
) -> BinaryMask:
    """Grow the excised region, then re-blacken protected pixels."""
    if protect is not None and protect.bits.shape != region.bits.shape:
        raise ShapeError(
            f"protect shape {protect.bits.shape} differs from region {region.bits.shape}"
        )
    bits = region.bits
    if config.dilation_iterations > 0 and bits.any():
        structure = np.ones((config.dilation_kernel, config.dilation_kernel), dtype=bool)
        bits = ndimage.binary_dilation(
            bits, structure=structure, iterations=config.dilation_iterations
        )
    else:
        bits = bits.copy()
    if protect is not None:
        bits &= ~protect.bits
    return BinaryMask(bits)


def _recover_mask(
    segmented_map: SemanticMap, cur: ObjectInstance
) -> Optional[BinaryMask]:
    """Largest component of cur's category that overlaps cur's original bbox."""
    palette = segmented_map.palette
    if cur.category not in palette:
        return None
    category_bits = segmented_map.labels == palette.index_of(cur.category)
    if not category_bits.any():
        return None
    labeled, n = ndimage.label(category_bits, structure=CONN4)
    box = cur.bbox
    best = None
    best_count = 0
    for comp in range(1, n + 1):
        comp_bits = labeled == comp
        if not comp_bits[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1].any():
            continue
        count = int(comp_bits.sum())
        if count > best_count:
            best, best_count = comp_bits, count
    return BinaryMask(best) if best is not None else None


def extract_single(
    image: np.ndarray,
    semantic_map: SemanticMap,
    instances: Sequence[ObjectInstance],
    targets: Iterable[str],
    cur: str,
    inpainter: Inpainter,
    segmenter: Segmenter,
    config: ExtractionConfig = ExtractionConfig(),
) -> BinaryMask:
    """Inpaint away all other targets, re-segment, recover cur's mask.

    Retries with one extra dilation iteration per retry if recovery comes
    back empty; `ExtractionFailed` after the configured retries.
    """
    targets = set(targets)
    by_id = _index_instances(instances)
    if cur not in targets or cur not in by_id:
        raise UnknownTarget(f"cur {cur!r} is not a target")
    cur_inst = by_id[cur]
    raw_region = build_inpaint_mask(semantic_map, instances, targets, cur=cur)
    for retry in range(config.max_resegment_retries + 1):
        attempt_config = ExtractionConfig(
            dilation_kernel=config.dilation_kernel,
            dilation_iterations=config.dilation_iterations + retry,
            max_resegment_retries=config.max_resegment_retries,
        )
        region = dilate_backfill(raw_region, protect=cur_inst.mask, config=attempt_config)
        repaired = inpainter.inpaint(image, region)
        segmented = segmenter.segment(repaired)
        recovered = _recover_mask(segmented.map, cur_inst)
        if recovered is not None and not recovered.empty:
            return recovered
    raise ExtractionFailed(cur)


def map_split(
    scene: SceneRecord,
    targets: Iterable[str],
    inpainter: Inpainter,
    segmenter: Segmenter,
    config: ExtractionConfig = ExtractionConfig(),
    debug_dir=None,
) -> ExtractionResult:
    """One extract_single per target, then the background pass."""
    targets = set(targets)
    if not targets:
        raise ValueError("targets must be non-empty")
    if scene.semantic_map is None:
        raise ValueError(f"scene {scene.seed_id!r} has no semantic map")
    by_id = _index_instances(scene.instances)
    missing = targets - set(by_id)
    if missing:
        raise UnknownTarget(f"target ids {sorted(missing)} not in scene {scene.seed_id!r}")

    debug_path = pathlib.Path(debug_dir) if debug_dir is not None else None
    singles: dict[str, BinaryMask] = {}
    for instance_id in sorted(targets):
        mask = extract_single(
            scene.image,
            scene.semantic_map,
            scene.instances,
            targets,
            instance_id,
            inpainter,
            segmenter,
            config,
        )
        singles[instance_id] = mask
        if debug_path is not None:
            (debug_path / f"{scene.seed_id}-{instance_id}.pgm").write_bytes(mask_to_p5(mask))

    bg_region = build_inpaint_mask(
        scene.semantic_map, scene.instances, targets, background_pass=True
    )
    bg_region = dilate_backfill(bg_region, protect=None, config=config)
    background_image = inpainter.inpaint(scene.image, bg_region)
    background_map = segmenter.segment(background_image).map
    if debug_path is not None:
        (debug_path / f"{scene.seed_id}-background.pgm").write_bytes(
            mask_to_p5(bg_region)
        )
    return ExtractionResult(
        singles=singles, background_map=background_map, background_image=background_image
    )
