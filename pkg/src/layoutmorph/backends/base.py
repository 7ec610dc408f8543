"""Abstract interfaces for the four model-backed pipeline stages.

Implementations must be safe for concurrent calls from multiple workers.
The synthetic implementations are pure functions of their inputs plus
explicit seeds; the HTTP adapter serializes nothing but enforces a
max-in-flight limit.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..core import CandidateSet, CategoryPalette, ObjectInstance, SemanticMap
from ..errors import ShapeError


@dataclass(frozen=True)
class SegmentationResult:
    """Segmenter output: label map, recovered instances, category counts."""

    map: SemanticMap
    instances: tuple[ObjectInstance, ...]
    candidates: CandidateSet

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        per_cat: dict[str, int] = {}
        for inst in self.instances:
            per_cat[inst.category] = per_cat.get(inst.category, 0) + 1
            label_pixels = self.map.labels == self.map.palette.index_of(inst.category)
            if inst.mask.bits.shape != label_pixels.shape:
                raise ShapeError(
                    f"instance {inst.instance_id!r} mask shape {inst.mask.bits.shape} "
                    f"differs from map shape {label_pixels.shape}"
                )
            if (inst.mask.bits & ~label_pixels).any():
                raise ValueError(
                    f"instance {inst.instance_id!r} has pixels outside its label region"
                )
        if per_cat != dict(self.candidates.counts):
            raise ValueError(
                f"candidates {dict(self.candidates.counts)} disagree with "
                f"per-category instance counts {per_cat}"
            )


@dataclass(frozen=True)
class TranslationParams:
    """Knobs forwarded to the mask-to-image stage."""

    guidance_strength: float = 1.3
    diffusion_steps: int = 250
    samples_per_map: int = 5

    def __post_init__(self):
        if not self.guidance_strength > 0:
            raise ValueError(f"guidance_strength must be > 0, got {self.guidance_strength}")
        if self.diffusion_steps < 1:
            raise ValueError(f"diffusion_steps must be >= 1, got {self.diffusion_steps}")
        if self.samples_per_map < 1:
            raise ValueError(f"samples_per_map must be >= 1, got {self.samples_per_map}")

    def to_json_obj(self) -> dict:
        return {
            "guidance_strength": self.guidance_strength,
            "diffusion_steps": self.diffusion_steps,
            "samples_per_map": self.samples_per_map,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "TranslationParams":
        return cls(
            guidance_strength=float(obj.get("guidance_strength", 1.3)),
            diffusion_steps=int(obj.get("diffusion_steps", 250)),
            samples_per_map=int(obj.get("samples_per_map", 5)),
        )


@dataclass(frozen=True)
class FaultPolicy:
    """Controls deliberate caption corruption in the synthetic captioner.

    With all probabilities at 0 the captioner is exact. `force_cycle`
    ignores the probabilities and injects exactly one fault per caption,
    cycling omit -> misclassify -> miscount across calls (skipping kinds
    whose probability is 0), which gives fault-injection runs an even,
    known mix.
    """

    p_omit: float = 0.0
    p_misclassify: float = 0.0
    p_miscount: float = 0.0
    confusion_table: Mapping[str, str] = field(default_factory=dict)
    rng_seed: int = 0
    force_cycle: bool = False

    def __post_init__(self):
        for name in ("p_omit", "p_misclassify", "p_miscount"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        table = dict(self.confusion_table)
        for src, dst in table.items():
            if src == dst:
                raise ValueError(f"confusion_table maps {src!r} to itself")
        object.__setattr__(self, "confusion_table", table)

    def validate_against(self, palette: CategoryPalette):
        for src, dst in self.confusion_table.items():
            if src not in palette:
                raise ValueError(f"confusion_table key {src!r} not in palette")
            if dst not in palette:
                raise ValueError(f"confusion_table value {dst!r} not in palette")

    def to_json_obj(self) -> dict:
        return {
            "p_omit": self.p_omit,
            "p_misclassify": self.p_misclassify,
            "p_miscount": self.p_miscount,
            "confusion_table": dict(self.confusion_table),
            "rng_seed": self.rng_seed,
            "force_cycle": self.force_cycle,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "FaultPolicy":
        return cls(
            p_omit=float(obj.get("p_omit", 0.0)),
            p_misclassify=float(obj.get("p_misclassify", 0.0)),
            p_miscount=float(obj.get("p_miscount", 0.0)),
            confusion_table=dict(obj.get("confusion_table", {})),
            rng_seed=int(obj.get("rng_seed", 0)),
            force_cycle=bool(obj.get("force_cycle", False)),
        )

    @property
    def inert(self) -> bool:
        return (
            not self.force_cycle
            and self.p_omit == 0.0
            and self.p_misclassify == 0.0
            and self.p_miscount == 0.0
        )


class Segmenter(abc.ABC):
    @abc.abstractmethod
    def segment(self, image: np.ndarray) -> SegmentationResult:
        """Label every pixel of ``image``; recover instances and counts."""


class Inpainter(abc.ABC):
    @abc.abstractmethod
    def inpaint(self, image: np.ndarray, region) -> np.ndarray:
        """Fill ``region`` plausibly; pixels outside it are untouched."""


class MaskToImage(abc.ABC):
    @abc.abstractmethod
    def translate(self, semantic_map: SemanticMap, params: TranslationParams) -> list[np.ndarray]:
        """Render ``samples_per_map`` images realizing the layout."""


class CaptionService(abc.ABC):
    system_id: str = "captioner"

    @abc.abstractmethod
    def caption(self, image: np.ndarray) -> str:
        """Describe ``image`` in one caption."""


def check_image(image: np.ndarray) -> np.ndarray:
    a = np.asarray(image)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected non-empty (h, w, 3) RGB raster, got {a.shape}")
    return a.astype(np.uint8, copy=False)
