"""HTTP adapter: drives any server speaking the wire protocol.

Retry policy: 429 responses raise Throttled and are retried with
exponential backoff (base 500 ms, factor 2, max 5 attempts); other 4xx
and 5xx responses raise BackendError and are not retried. A bearer token
is attached when configured (explicitly or via LAYOUTMORPH_TOKEN).
"""

from __future__ import annotations

import os
import threading
import time
from typing import Callable, Mapping, Optional

import numpy as np
import requests

from .. import wire
from ..core import BinaryMask, SemanticMap
from ..errors import BackendError, Throttled
from .base import CaptionService, Inpainter, MaskToImage, SegmentationResult, Segmenter, TranslationParams

TOKEN_ENV_VAR = "LAYOUTMORPH_TOKEN"

RETRY_BASE_SECONDS = 0.5
RETRY_FACTOR = 2.0
RETRY_MAX_ATTEMPTS = 5


class HttpClient:
    """Shared transport: one session, a max-in-flight gate per endpoint."""

    def __init__(
        self,
        base_url: str,
        token: Optional[str] = None,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        session: Optional[requests.Session] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        self.timeout = timeout
        self.max_in_flight = max_in_flight
        self._session = session or requests.Session()
        self._sleeper = sleeper
        self._gates: dict[str, threading.BoundedSemaphore] = {}
        self._gates_lock = threading.Lock()

    def _gate(self, path: str) -> threading.BoundedSemaphore:
        with self._gates_lock:
            if path not in self._gates:
                self._gates[path] = threading.BoundedSemaphore(self.max_in_flight)
            return self._gates[path]

    def post(self, path: str, body: Mapping) -> dict:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        url = f"{self.base_url}{path}"
        gate = self._gate(path)
        delay = RETRY_BASE_SECONDS
        for attempt in range(RETRY_MAX_ATTEMPTS):
            try:
                with gate:
                    resp = self._session.post(url, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                raise BackendError(f"transport failure for {path}", detail=str(exc)) from exc
            if resp.status_code == 429:
                if attempt == RETRY_MAX_ATTEMPTS - 1:
                    raise Throttled(f"{path} still throttled after {RETRY_MAX_ATTEMPTS} attempts")
                self._sleeper(delay)
                delay *= RETRY_FACTOR
                continue
            if resp.status_code != 200:
                try:
                    obj = resp.json()
                    message, detail = obj.get("error", f"HTTP {resp.status_code}"), obj.get("detail")
                except ValueError:
                    message, detail = f"HTTP {resp.status_code}", resp.text[:200]
                raise BackendError(message, detail=detail)
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendError(f"non-JSON response from {path}", detail=str(exc)) from exc
        raise AssertionError("unreachable")


class HttpSegmenter(Segmenter):
    def __init__(self, client: HttpClient):
        self.client = client

    def segment(self, image: np.ndarray) -> SegmentationResult:
        return wire.parse_segment_response(self.client.post("/v1/segment", wire.segment_request(image)))


class HttpInpainter(Inpainter):
    def __init__(self, client: HttpClient):
        self.client = client

    def inpaint(self, image: np.ndarray, region: BinaryMask) -> np.ndarray:
        return wire.parse_inpaint_response(
            self.client.post("/v1/inpaint", wire.inpaint_request(image, region))
        )


class HttpMaskToImage(MaskToImage):
    def __init__(self, client: HttpClient):
        self.client = client

    def translate(self, semantic_map: SemanticMap, params: TranslationParams) -> list[np.ndarray]:
        images = wire.parse_translate_response(
            self.client.post("/v1/translate", wire.translate_request(semantic_map, params))
        )
        if len(images) != params.samples_per_map:
            raise BackendError(
                f"expected {params.samples_per_map} images, got {len(images)}"
            )
        return images


class HttpCaptionService(CaptionService):
    def __init__(self, client: HttpClient, system_id: str):
        self.client = client
        self.system_id = system_id

    def caption(self, image: np.ndarray) -> str:
        return wire.parse_caption_response(
            self.client.post("/v1/caption", wire.caption_request(image, self.system_id))
        )
