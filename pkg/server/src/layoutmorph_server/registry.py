"""Lazy per-endpoint model registry with serialized inference queues.

Each advertised endpoint owns one model slot. A slot loads its model on
first use (so /healthz reports ready:false until then), serializes
inference through a lock for device safety, and bounds how many requests
may be in flight at once; past that bound it answers Overloaded, which
the HTTP layer turns into 429.

Model call surfaces, one per endpoint kind:

- segment: ``detect(image) -> iterable of (category, mask bits, z_order)``
- inpaint: ``inpaint(image, region) -> raster``
- translate: ``translate(semantic_map, params) -> list of rasters``
- caption: ``caption(image, system_id) -> str``

Segment models may emit categories outside the server palette; the HTTP
layer drops and counts those, so detectors with open vocabularies plug
in without palette knowledge.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional

import numpy as np

from layoutmorph.backends.base import FaultPolicy, TranslationParams
from layoutmorph.backends.synthetic import (
    BackgroundFillInpainter,
    ExactSegmenter,
    FaultInjectingCaptioner,
    FlatRenderer,
)
from layoutmorph.core import BinaryMask, CategoryPalette, SemanticMap

from .config import ConfigError, ModelEntry, ServerConfig

Loader = Callable[[ModelEntry, CategoryPalette], object]


class Overloaded(Exception):
    """A model slot's queue is full; the request should be retried later."""


class _SyntheticSegmentModel:
    def __init__(self, palette: CategoryPalette):
        self._segmenter = ExactSegmenter(palette)

    def detect(self, image: np.ndarray) -> list[tuple[str, np.ndarray, int]]:
        result = self._segmenter.segment(image)
        return [(inst.category, inst.mask.bits, inst.z_order) for inst in result.instances]


class _SyntheticInpaintModel:
    def __init__(self, palette: CategoryPalette):
        self._inpainter = BackgroundFillInpainter(palette)

    def inpaint(self, image: np.ndarray, region: BinaryMask) -> np.ndarray:
        return self._inpainter.inpaint(image, region)


class _SyntheticTranslateModel:
    def __init__(self):
        self._renderer = FlatRenderer()

    def translate(self, semantic_map: SemanticMap, params: TranslationParams) -> list[np.ndarray]:
        return self._renderer.translate(semantic_map, params)


class _SyntheticCaptionModel:
    """One captioning model per server; system_id is accepted and ignored."""

    def __init__(self, palette: CategoryPalette, policy: FaultPolicy):
        self._captioner = FaultInjectingCaptioner(palette, policy=policy)

    def caption(self, image: np.ndarray, system_id: str) -> str:
        return self._captioner.caption(image)


def _load_synthetic_segment(entry: ModelEntry, palette: CategoryPalette):
    return _SyntheticSegmentModel(palette)


def _load_synthetic_inpaint(entry: ModelEntry, palette: CategoryPalette):
    return _SyntheticInpaintModel(palette)


def _load_synthetic_translate(entry: ModelEntry, palette: CategoryPalette):
    return _SyntheticTranslateModel()


def _load_synthetic_caption(entry: ModelEntry, palette: CategoryPalette):
    policy = FaultPolicy.from_json_obj(entry.options) if entry.options else FaultPolicy()
    return _SyntheticCaptionModel(palette, policy)


_LOADERS: dict[tuple[str, str], Loader] = {
    ("segment", "synthetic"): _load_synthetic_segment,
    ("inpaint", "synthetic"): _load_synthetic_inpaint,
    ("translate", "synthetic"): _load_synthetic_translate,
    ("caption", "synthetic"): _load_synthetic_caption,
}


def register_loader(endpoint: str, model_id: str, loader: Loader):
    """Make (endpoint, model_id) loadable; how real models plug in."""
    _LOADERS[(endpoint, model_id)] = loader


def loader_for(endpoint: str, model_id: str) -> Loader:
    loader = _LOADERS.get((endpoint, model_id))
    if loader is None:
        raise ConfigError(f"no loadable model {model_id!r} for endpoint {endpoint!r}")
    return loader


class ModelSlot:
    """One endpoint's model: lazy-loaded, serialized, bounded queue."""

    def __init__(
        self,
        endpoint: str,
        entry: ModelEntry,
        loader: Loader,
        palette: CategoryPalette,
        queue_depth: int,
    ):
        self.endpoint = endpoint
        self.entry = entry
        self._loader = loader
        self._palette = palette
        self._queue = threading.BoundedSemaphore(queue_depth)
        self._infer_lock = threading.Lock()
        self._load_lock = threading.Lock()
        self._model = None

    @property
    def ready(self) -> bool:
        return self._model is not None

    def _loaded(self):
        with self._load_lock:
            if self._model is None:
                self._model = self._loader(self.entry, self._palette)
            return self._model

    @contextmanager
    def acquire(self):
        """Admit one request: load if needed, then run under the lock."""
        if not self._queue.acquire(blocking=False):
            raise Overloaded(f"{self.endpoint} queue is full")
        try:
            with self._infer_lock:
                yield self._loaded()
        finally:
            self._queue.release()


class ModelRegistry:
    """The advertised endpoints and their slots; built once at startup."""

    def __init__(self, config: ServerConfig, palette: CategoryPalette):
        self._slots: dict[str, ModelSlot] = {}
        for endpoint, entry in config.models.items():
            loader = loader_for(endpoint, entry.model)  # fail fast on unknown models
            self._slots[endpoint] = ModelSlot(endpoint, entry, loader, palette, config.queue_depth)

    def slot(self, endpoint: str) -> Optional[ModelSlot]:
        return self._slots.get(endpoint)

    def status(self) -> dict:
        return {
            endpoint: {
                "model": slot.entry.model,
                "device": slot.entry.device,
                "ready": slot.ready,
            }
            for endpoint, slot in sorted(self._slots.items())
        }
