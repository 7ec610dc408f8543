"""Synthetic scene generation with recorded ground truth.

Scenes are flat-rendered layouts of solid rectangles and ellipses. The
generator records exactly what it placed (instances, per-category counts,
the reference caption), so every downstream stage can be checked against
known truth. Shapes are solid with side >= 4, which keeps their masks
4-connected through nearest-neighbor rotation and scaling.

Spacing: in non-overlap mode all objects keep a Chebyshev gap of at least
`min_gap` pixels (default 6) from each other, which clears the
extractor's dilation reach, so inpaint-based mask recovery is lossless.
In overlap mode one object deliberately occludes a corner of another.
"""

from __future__ import annotations

from random import Random
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .backends.synthetic import render_caption, render_flat
from .core import (
    CONN4,
    BinaryMask,
    CandidateSet,
    CategoryPalette,
    ObjectInstance,
    SceneRecord,
    SemanticMap,
    tight_bbox,
)

_DEFAULT_CATEGORIES = [
    ("person", (220, 20, 60)),
    ("dog", (119, 11, 32)),
    ("cat", (0, 0, 142)),
    ("car", (0, 60, 100)),
    ("bus", (0, 80, 100)),
    ("tree", (107, 142, 35)),
    ("chair", (190, 153, 153)),
    ("bird", (152, 251, 152)),
    ("horse", (70, 130, 180)),
    ("sheep", (220, 220, 0)),
    ("boat", (0, 0, 70)),
    ("bench", (250, 170, 30)),
]


def default_palette() -> CategoryPalette:
    return CategoryPalette.from_pairs(_DEFAULT_CATEGORIES)


def _shape_bits(rng: Random, size: int) -> np.ndarray:
    """One solid rectangle or ellipse, in-canvas, sides 4..10."""
    w = rng.randint(4, min(10, size // 3))
    h = rng.randint(4, min(10, size // 3))
    x0 = rng.randint(0, size - w)
    y0 = rng.randint(0, size - h)
    bits = np.zeros((size, size), dtype=bool)
    if rng.random() < 0.5:
        bits[y0 : y0 + h, x0 : x0 + w] = True
    else:
        cy, cx = y0 + (h - 1) / 2, x0 + (w - 1) / 2
        ys, xs = np.ogrid[:size, :size]
        bits = ((xs - cx) / (w / 2)) ** 2 + ((ys - cy) / (h / 2)) ** 2 <= 1.0
    return bits


def _chebyshev_clear(bits: np.ndarray, taken: np.ndarray, gap: int) -> bool:
    if not taken.any():
        return True
    grown = ndimage.binary_dilation(bits, structure=np.ones((2 * gap + 1, 2 * gap + 1), dtype=bool))
    return not (grown & taken).any()


def _connected(bits: np.ndarray) -> bool:
    _, n = ndimage.label(bits, structure=CONN4)
    return n == 1


def generate_scene(
    seed_id: str,
    rng: Random,
    palette: Optional[CategoryPalette] = None,
    size: int = 64,
    n_objects: int = 3,
    overlap: bool = False,
    min_gap: int = 6,
    categories: Optional[Sequence[str]] = None,
) -> SceneRecord:
    """Build one scene; deterministic given the rng state."""
    palette = palette or default_palette()
    pool = list(categories) if categories is not None else palette.names
    if overlap and n_objects < 2:
        raise ValueError("overlap scenes need at least 2 objects")

    for _ in range(200):
        placements = _try_place(rng, palette, pool, size, n_objects, overlap, min_gap)
        if placements is None:
            continue
        labels = np.zeros((size, size), dtype=np.uint8)
        for category, bits in placements:
            labels[bits] = palette.index_of(category)
        instances = []
        ok = True
        for z, (category, bits) in enumerate(placements):
            visible = bits.copy()
            for _, higher in placements[z + 1 :]:
                visible &= ~higher
            if not visible.any() or not _connected(visible):
                ok = False
                break
            mask = BinaryMask(visible)
            instances.append(ObjectInstance(f"obj{z:03d}", category, mask, tight_bbox(mask), z))
        if not ok:
            continue
        semantic_map = SemanticMap(labels, palette)
        counts: dict[str, int] = {}
        for inst in instances:
            counts[inst.category] = counts.get(inst.category, 0) + 1
        caption = render_caption([(name, counts[name]) for name in sorted(counts)])
        return SceneRecord(
            seed_id=seed_id,
            image=render_flat(semantic_map),
            semantic_map=semantic_map,
            instances=tuple(instances),
            candidates=CandidateSet(counts),
            gt_captions=(caption,),
        )
    raise RuntimeError(f"could not place {n_objects} objects on a {size}x{size} canvas")


def _try_place(rng, palette, pool, size, n_objects, overlap, min_gap):
    taken = np.zeros((size, size), dtype=bool)
    placements: list[tuple[str, np.ndarray]] = []
    for z in range(n_objects):
        placed = False
        for _ in range(200):
            if overlap and z == 1:
                bits = _occluding_shape(rng, placements[0][1], size)
                if bits is None:
                    continue
                choices = [c for c in pool if c != placements[0][0]]
                category = choices[rng.randrange(len(choices))]
            else:
                bits = _shape_bits(rng, size)
                if not _chebyshev_clear(bits, taken, min_gap):
                    continue
                category = pool[rng.randrange(len(pool))]
            taken |= bits
            placements.append((category, bits))
            placed = True
            break
        if not placed:
            return None
    return placements


def _occluding_shape(rng: Random, base: np.ndarray, size: int) -> Optional[np.ndarray]:
    """A rectangle covering one corner of `base`, leaving the rest connected."""
    box = tight_bbox(BinaryMask(base))
    w = rng.randint(3, max(3, box.width - 1))
    h = rng.randint(3, max(3, box.height - 1))
    corner = rng.randrange(4)
    overlap_w = max(2, min(w - 1, box.width - 2))
    overlap_h = max(2, min(h - 1, box.height - 2))
    if corner == 0:  # top-left
        x0, y0 = box.x_min + overlap_w - w, box.y_min + overlap_h - h
    elif corner == 1:  # top-right
        x0, y0 = box.x_max - overlap_w + 1, box.y_min + overlap_h - h
    elif corner == 2:  # bottom-left
        x0, y0 = box.x_min + overlap_w - w, box.y_max - overlap_h + 1
    else:  # bottom-right
        x0, y0 = box.x_max - overlap_w + 1, box.y_max - overlap_h + 1
    if x0 < 0 or y0 < 0 or x0 + w > size or y0 + h > size:
        return None
    bits = np.zeros((size, size), dtype=bool)
    bits[y0 : y0 + h, x0 : x0 + w] = True
    covered = bits & base
    if not covered.any() or covered.sum() >= base.sum() // 2:
        return None
    remainder = base & ~bits
    if not remainder.any() or not _connected(remainder):
        return None
    return bits
