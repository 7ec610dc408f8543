"""Corpus ingestion and synthetic corpus generation.

A corpus is a directory holding seed images plus a COCO-style
``corpus.json`` subset: ``images`` (id, file_name, width, height),
``annotations`` (image_id, category_id, optional segmentation),
``captions`` (image_id, caption), and ``categories`` (id, name).
Polygon and uncompressed RLE segmentations are converted to binary
masks at ingestion; scenes without masks rely on the segmentation
backend at run time.
"""

from __future__ import annotations

import json
import logging
import random
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .core import BinaryMask, CandidateSet, CategoryPalette, ObjectInstance, SceneRecord
from .errors import CorpusError
from .scenegen import default_palette, generate_scene

logger = logging.getLogger(__name__)

CORPUS_FILE = "corpus.json"
PALETTE_FILE = "palette.json"
FAULT_POLICY_FILE = "fault_policy.json"


def polygon_to_mask(coords: Sequence[float], width: int, height: int) -> BinaryMask:
    """Rasterize one polygon with the even-odd rule over pixel centers.

    A pixel (x, y) is inside when its center (x+0.5, y+0.5) falls inside
    the polygon; half-open edge intervals on y avoid double-counting
    vertices.
    """
    if len(coords) < 6 or len(coords) % 2:
        raise CorpusError(f"polygon needs >= 3 (x, y) pairs, got {len(coords)} values")
    xs = [float(v) for v in coords[0::2]]
    ys = [float(v) for v in coords[1::2]]
    n = len(xs)
    bits = np.zeros((height, width), dtype=bool)
    for row in range(height):
        cy = row + 0.5
        crossings = []
        for i in range(n):
            y1, y2 = ys[i], ys[(i + 1) % n]
            if (y1 <= cy < y2) or (y2 <= cy < y1):
                t = (cy - y1) / (y2 - y1)
                crossings.append(xs[i] + t * (xs[(i + 1) % n] - xs[i]))
        crossings.sort()
        for j in range(0, len(crossings) - 1, 2):
            start = max(int(np.ceil(crossings[j] - 0.5)), 0)
            stop = min(int(np.ceil(crossings[j + 1] - 0.5)), width)
            if stop > start:
                bits[row, start:stop] = True
    return BinaryMask(bits)


def rle_to_mask(rle: dict) -> BinaryMask:
    """Decode uncompressed column-major RLE (counts start with zeros)."""
    try:
        height, width = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"malformed RLE segmentation: {exc}") from exc
    if any(c < 0 for c in counts):
        raise CorpusError("RLE counts must be non-negative")
    total = height * width
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for count in counts:
        if pos + count > total:
            raise CorpusError(f"RLE runs sum past {total} pixels")
        if value:
            flat[pos : pos + count] = True
        pos += count
        value = not value
    if pos != total:
        raise CorpusError(f"RLE runs cover {pos} of {total} pixels")
    return BinaryMask(flat.reshape((height, width), order="F"))


def mask_to_rle(mask: BinaryMask) -> dict:
    """Inverse of rle_to_mask; run lengths in column-major order."""
    flat = mask.bits.flatten(order="F")
    boundaries = np.concatenate(([0], np.flatnonzero(np.diff(flat)) + 1, [flat.size]))
    runs = np.diff(boundaries).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"counts": [int(r) for r in runs], "size": [mask.height, mask.width]}


def segmentation_to_mask(segmentation, width: int, height: int) -> BinaryMask:
    """COCO segmentation field (polygon list or RLE dict) to a mask."""
    if isinstance(segmentation, dict):
        mask = rle_to_mask(segmentation)
        if mask.bits.shape != (height, width):
            raise CorpusError(
                f"RLE size {mask.bits.shape} does not match image ({height}, {width})"
            )
        return mask
    if isinstance(segmentation, (list, tuple)) and segmentation:
        if isinstance(segmentation[0], (list, tuple)):
            merged = BinaryMask.zeros(width, height)
            for poly in segmentation:
                merged = merged | polygon_to_mask(poly, width, height)
            return merged
        return polygon_to_mask(segmentation, width, height)
    raise CorpusError(f"unsupported segmentation payload: {type(segmentation).__name__}")


def _read_corpus_doc(json_path: Path) -> dict:
    if not json_path.exists():
        raise CorpusError(f"corpus file not found: {json_path}")
    try:
        doc = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{json_path}: line {exc.lineno}: {exc.msg}") from exc
    for key in ("images", "annotations", "captions", "categories"):
        if key not in doc:
            raise CorpusError(f"{json_path}: missing top-level key {key!r}")
    return doc


def ingest_corpus(path) -> list[SceneRecord]:
    """Load a corpus directory (or an explicit corpus JSON path)."""
    root = Path(path)
    json_path = root / CORPUS_FILE if root.is_dir() else root
    root = json_path.parent
    doc = _read_corpus_doc(json_path)

    categories = {}
    for entry in doc["categories"]:
        categories[int(entry["id"])] = str(entry["name"])

    images: dict[int, np.ndarray] = {}
    order: list[int] = []
    for entry in doc["images"]:
        image_id = int(entry["id"])
        file_path = root / entry["file_name"]
        if not file_path.exists():
            raise CorpusError(f"image file missing for id {image_id}: {file_path}")
        with Image.open(file_path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        expected = (int(entry["height"]), int(entry["width"]))
        if arr.shape[:2] != expected:
            raise CorpusError(
                f"image {image_id} is {arr.shape[:2]}, corpus declares {expected}"
            )
        if image_id in images:
            raise CorpusError(f"duplicate image id {image_id}")
        images[image_id] = arr
        order.append(image_id)

    captions: dict[int, list[str]] = {image_id: [] for image_id in images}
    for entry in doc["captions"]:
        image_id = int(entry["image_id"])
        if image_id not in images:
            raise CorpusError(f"caption references unknown image_id {image_id}")
        captions[image_id].append(str(entry["caption"]))

    annotations: dict[int, list[dict]] = {image_id: [] for image_id in images}
    for entry in doc["annotations"]:
        image_id = int(entry["image_id"])
        if image_id not in images:
            raise CorpusError(f"annotation references unknown image_id {image_id}")
        if int(entry["category_id"]) not in categories:
            raise CorpusError(f"annotation references unknown category_id {entry['category_id']}")
        annotations[image_id].append(entry)

    records = []
    for image_id in order:
        arr = images[image_id]
        height, width = arr.shape[:2]
        instances = []
        counts: dict[str, int] = {}
        masked = 0
        for z, entry in enumerate(annotations[image_id]):
            category = categories[int(entry["category_id"])]
            counts[category] = counts.get(category, 0) + 1
            segmentation = entry.get("segmentation")
            if segmentation is None:
                continue
            mask = segmentation_to_mask(segmentation, width, height)
            try:
                instances.append(ObjectInstance.from_mask(f"ann{z:04d}", category, mask, z))
            except Exception as exc:
                raise CorpusError(
                    f"image {image_id} annotation {z}: unusable mask ({exc})"
                ) from exc
            masked += 1
        # partial masks would break the instance/candidate census cross-check
        if masked != len(annotations[image_id]):
            instances = []
        records.append(
            SceneRecord(
                seed_id=str(image_id),
                image=arr,
                semantic_map=None,
                instances=tuple(instances),
                candidates=CandidateSet(counts) if counts else None,
                gt_captions=tuple(captions[image_id]),
            )
        )
    if not records:
        logger.warning("corpus at %s contains no images", root)
    return records


def load_corpus_palette(path) -> Optional[CategoryPalette]:
    """Palette shipped with a corpus directory, when present."""
    root = Path(path)
    palette_path = (root if root.is_dir() else root.parent) / PALETTE_FILE
    if not palette_path.exists():
        return None
    return CategoryPalette.from_json_obj(json.loads(palette_path.read_text(encoding="utf-8")))


def load_corpus_fault_policy(path):
    """Fault policy shipped with a corpus directory, when present."""
    from .backends.base import FaultPolicy

    root = Path(path)
    policy_path = (root if root.is_dir() else root.parent) / FAULT_POLICY_FILE
    if not policy_path.exists():
        return None
    return FaultPolicy.from_json_obj(json.loads(policy_path.read_text(encoding="utf-8")))


def write_synthetic_corpus(
    out_dir,
    n_scenes: int,
    master_seed: int = 0,
    palette: Optional[CategoryPalette] = None,
    size: int = 64,
    n_objects: int = 3,
    overlap_fraction: float = 0.0,
    categories: Optional[Sequence[str]] = None,
    fault_policy=None,
) -> Path:
    """Generate a flat-rendered scene corpus with exact annotations."""
    if n_scenes < 0:
        raise ValueError(f"n_scenes must be >= 0, got {n_scenes}")
    if not 0.0 <= overlap_fraction <= 1.0:
        raise ValueError(f"overlap_fraction must be in [0, 1], got {overlap_fraction}")
    palette = palette or default_palette()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(master_seed)
    doc: dict = {
        "images": [],
        "annotations": [],
        "captions": [],
        "categories": [{"id": e.index, "name": e.name} for e in palette.entries],
    }
    for i in range(n_scenes):
        overlap = rng.random() < overlap_fraction
        record = generate_scene(
            f"scene_{i:04d}",
            rng,
            palette=palette,
            size=size,
            n_objects=n_objects,
            overlap=overlap,
            categories=categories,
        )
        file_name = f"scene_{i:04d}.png"
        Image.fromarray(record.image).save(out / file_name)
        doc["images"].append({"id": i, "file_name": file_name, "width": size, "height": size})
        for inst in record.instances:
            doc["annotations"].append(
                {
                    "image_id": i,
                    "category_id": palette.index_of(inst.category),
                    "segmentation": mask_to_rle(inst.mask),
                }
            )
        for caption in record.gt_captions:
            doc["captions"].append({"image_id": i, "caption": caption})
    (out / CORPUS_FILE).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    (out / PALETTE_FILE).write_text(
        json.dumps(palette.to_json_obj(), indent=2) + "\n", encoding="utf-8"
    )
    if fault_policy is not None:
        (out / FAULT_POLICY_FILE).write_text(
            json.dumps(fault_policy.to_json_obj(), indent=2) + "\n", encoding="utf-8"
        )
    return out
