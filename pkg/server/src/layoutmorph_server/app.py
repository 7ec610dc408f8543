"""WSGI application implementing the wire protocol plus GET /healthz.

Request flow per endpoint: auth, size gate, JSON parse, payload decode,
bounded model acquisition (full queue -> 429), inference, response
encode. Bad payloads answer 400, unknown paths 404, model faults 500,
all as {error, detail} JSON.

Two invariants are enforced here rather than trusted to models: segment
responses carry only palette categories (out-of-palette detections are
dropped and counted in the response's "dropped" field), and inpaint
responses are composited from the request image outside the region, so
the outside-region identity holds no matter what the model painted.
"""

from __future__ import annotations

import json
import logging
import socketserver
from contextlib import contextmanager
from typing import Iterable, Optional
from wsgiref.simple_server import WSGIRequestHandler, WSGIServer, make_server

import numpy as np

from layoutmorph import wire
from layoutmorph.backends.base import SegmentationResult
from layoutmorph.core import (
    BinaryMask,
    CandidateSet,
    CategoryPalette,
    ObjectInstance,
    SemanticMap,
)
from layoutmorph.errors import ShapeError

from .config import ResizePolicy, ServerConfig, load_palette
from .registry import ModelRegistry, Overloaded

logger = logging.getLogger(__name__)

_STATUS = {
    200: "200 OK",
    400: "400 Bad Request",
    401: "401 Unauthorized",
    404: "404 Not Found",
    405: "405 Method Not Allowed",
    413: "413 Payload Too Large",
    429: "429 Too Many Requests",
    500: "500 Internal Server Error",
}


class _HttpError(Exception):
    def __init__(self, status: int, error: str, detail: Optional[str] = None):
        super().__init__(error)
        self.status = status
        self.error = error
        self.detail = detail


@contextmanager
def _phase(status: int, label: str):
    """Convert exceptions in one handler phase to a labeled HTTP error."""
    try:
        yield
    except (_HttpError, Overloaded):
        raise
    except Exception as exc:
        if status >= 500:
            logger.exception("%s", label)
        raise _HttpError(status, label, f"{type(exc).__name__}: {exc}") from exc


def _field(body: dict, key: str) -> str:
    value = body.get(key)
    if not isinstance(value, str) or not value:
        raise ValueError(f"{key} must be a non-empty string")
    return value


def _nn_index(n_src: int, n_dst: int) -> np.ndarray:
    centers = (np.arange(n_dst) + 0.5) * (n_src / n_dst)
    return np.clip(centers.astype(np.int64), 0, n_src - 1)


def _resize_map(semantic_map: SemanticMap, width: int, height: int) -> SemanticMap:
    rows = _nn_index(semantic_map.height, height)
    cols = _nn_index(semantic_map.width, width)
    return SemanticMap(semantic_map.labels[np.ix_(rows, cols)], semantic_map.palette)


def _resize_image(image: np.ndarray, width: int, height: int) -> np.ndarray:
    if image.shape[:2] == (height, width):
        return image
    rows = _nn_index(image.shape[0], height)
    cols = _nn_index(image.shape[1], width)
    return image[np.ix_(rows, cols)]


def compose_detections(
    shape: tuple[int, int],
    detections: Iterable[tuple[str, np.ndarray, int]],
    palette: CategoryPalette,
) -> tuple[SegmentationResult, int]:
    """Composite raw detections into a palette-constrained segmentation.

    Detections paint the label map in ascending z order; each kept mask
    is then clipped to its visible pixels so the result satisfies the
    segmentation invariants even when detections overlap. Detections are
    dropped (and tallied) when their category is outside the palette or
    when compositing occludes them completely.
    """
    height, width = shape
    labels = np.zeros((height, width), dtype=np.uint8)
    kept: list[tuple[str, np.ndarray, int]] = []
    dropped = 0
    for category, bits, z_order in sorted(detections, key=lambda det: int(det[2])):
        if category not in palette:
            dropped += 1
            continue
        bits = np.asarray(bits, dtype=bool)
        if bits.shape != (height, width):
            raise ShapeError(f"detection mask shape {bits.shape} differs from image shape {shape}")
        kept.append((category, bits, int(z_order)))
        labels[bits] = palette.index_of(category)

    instances = []
    counts: dict[str, int] = {}
    for category, bits, z_order in kept:
        visible = bits & (labels == palette.index_of(category))
        if not visible.any():
            dropped += 1
            continue
        instances.append(
            ObjectInstance.from_mask(f"det{len(instances):03d}", category, BinaryMask(visible), z_order)
        )
        counts[category] = counts.get(category, 0) + 1

    result = SegmentationResult(
        map=SemanticMap(labels, palette),
        instances=tuple(instances),
        candidates=CandidateSet(counts),
    )
    return result, dropped


class WireApp:
    """The WSGI callable; holds the palette, registry, and knobs."""

    def __init__(
        self,
        config: ServerConfig,
        registry: ModelRegistry,
        palette: CategoryPalette,
        palette_sha256: str,
    ):
        self._registry = registry
        self._palette = palette
        self._palette_sha256 = palette_sha256
        self._token = config.auth_token
        self._max_request_bytes = config.max_request_bytes
        self._resize = config.resize_policy
        self._handlers = {
            "/v1/segment": self._segment,
            "/v1/inpaint": self._inpaint,
            "/v1/translate": self._translate,
            "/v1/caption": self._caption,
        }

    # -- plumbing ----------------------------------------------------------

    def __call__(self, environ, start_response):
        try:
            status, payload = self._dispatch(environ)
        except _HttpError as exc:
            status, payload = exc.status, wire.error_response(exc.error, exc.detail)
        except Overloaded as exc:
            status, payload = 429, wire.error_response("throttled", str(exc))
        except Exception as exc:  # last-ditch guard; details go to the log
            logger.exception("unhandled error serving %s", environ.get("PATH_INFO"))
            status, payload = 500, wire.error_response("internal error", f"{type(exc).__name__}: {exc}")
        body = json.dumps(payload).encode("utf-8")
        headers = [("Content-Type", "application/json"), ("Content-Length", str(len(body)))]
        if status == 429:
            headers.append(("Retry-After", "1"))
        start_response(_STATUS[status], headers)
        return [body]

    def _dispatch(self, environ) -> tuple[int, dict]:
        method = environ["REQUEST_METHOD"]
        path = environ.get("PATH_INFO", "")
        if path == "/healthz":
            if method != "GET":
                raise _HttpError(405, "method not allowed", f"{method} {path}")
            return 200, self._healthz()
        handler = self._handlers.get(path)
        if handler is None:
            raise _HttpError(404, "not found", path)
        if method != "POST":
            raise _HttpError(405, "method not allowed", f"{method} {path}")
        self._authorize(environ)
        return 200, handler(self._read_json(environ))

    def _authorize(self, environ):
        if self._token is None:
            return
        header = environ.get("HTTP_AUTHORIZATION", "")
        if header != f"Bearer {self._token}":
            raise _HttpError(401, "unauthorized", "missing or invalid bearer token")

    def _read_json(self, environ) -> dict:
        try:
            length = int(environ.get("CONTENT_LENGTH") or 0)
        except ValueError:
            raise _HttpError(400, "bad request", "unreadable Content-Length") from None
        if length > self._max_request_bytes:
            raise _HttpError(
                413, "payload too large", f"{length} bytes exceeds limit {self._max_request_bytes}"
            )
        raw = environ["wsgi.input"].read(length) if length > 0 else b""
        try:
            body = json.loads(raw)
        except ValueError as exc:
            raise _HttpError(400, "bad request", f"body is not JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise _HttpError(400, "bad request", "body must be a JSON object")
        return body

    def _slot(self, endpoint: str):
        slot = self._registry.slot(endpoint)
        if slot is None:
            raise _HttpError(404, "not found", f"no model configured for {endpoint}")
        return slot

    def _healthz(self) -> dict:
        return {
            "status": "ok",
            "palette_sha256": self._palette_sha256,
            "models": self._registry.status(),
        }

    # -- endpoints ---------------------------------------------------------

    def _segment(self, body: dict) -> dict:
        with _phase(400, "bad request"):
            image = wire.decode_image(_field(body, "image"))
        with _phase(500, "model failure"):
            with self._slot("segment").acquire() as model:
                detections = list(model.detect(image))
            result, dropped = compose_detections(image.shape[:2], detections, self._palette)
        response = wire.segment_response(result)
        response["dropped"] = dropped
        return response

    def _inpaint(self, body: dict) -> dict:
        with _phase(400, "bad request"):
            image = wire.decode_image(_field(body, "image"))
            region = wire.decode_mask(_field(body, "region"))
            if region.bits.shape != image.shape[:2]:
                raise ShapeError(
                    f"region shape {region.bits.shape} differs from image shape {image.shape[:2]}"
                )
        if region.empty:
            return wire.inpaint_response(image)  # identity; no model involved
        with _phase(500, "model failure"):
            with self._slot("inpaint").acquire() as model:
                painted = np.asarray(model.inpaint(image, region), dtype=np.uint8)
            if painted.shape != image.shape:
                raise ShapeError(
                    f"model returned shape {painted.shape} for image shape {image.shape}"
                )
        out = image.copy()
        out[region.bits] = painted[region.bits]
        return wire.inpaint_response(out)

    def _translate(self, body: dict) -> dict:
        with _phase(400, "bad request"):
            semantic_map, params = wire.parse_translate_request(body)
        if semantic_map.palette != self._palette:
            raise _HttpError(400, "palette mismatch", "request palette differs from the server palette")
        native_height, native_width = semantic_map.height, semantic_map.width
        if self._resize.mode == "fixed":
            semantic_map = _resize_map(semantic_map, self._resize.width, self._resize.height)
        with _phase(500, "model failure"):
            with self._slot("translate").acquire() as model:
                images = [np.asarray(im, dtype=np.uint8) for im in model.translate(semantic_map, params)]
            if len(images) != params.samples_per_map:
                raise ValueError(
                    f"model returned {len(images)} images for samples_per_map={params.samples_per_map}"
                )
            images = [_resize_image(im, native_width, native_height) for im in images]
            for im in images:
                if im.shape != (native_height, native_width, 3):
                    raise ShapeError(f"model returned raster of shape {im.shape}")
        return wire.translate_response(images)

    def _caption(self, body: dict) -> dict:
        with _phase(400, "bad request"):
            image = wire.decode_image(_field(body, "image"))
            system_id = _field(body, "system_id")
        with _phase(500, "model failure"):
            with self._slot("caption").acquire() as model:
                caption = model.caption(image, system_id)
            if not isinstance(caption, str) or not caption:
                raise ValueError("model produced an empty caption")
        return wire.caption_response(caption)


def create_app(config: ServerConfig) -> WireApp:
    """Resolve the palette, build the registry, and wire up the app."""
    palette, digest = load_palette(config)
    registry = ModelRegistry(config, palette)
    return WireApp(config, registry, palette, digest)


class ThreadingWSGIServer(socketserver.ThreadingMixIn, WSGIServer):
    """One thread per request; model slots do their own serialization."""

    daemon_threads = True


class _QuietHandler(WSGIRequestHandler):
    def log_message(self, format, *args):  # route access logs through logging
        logger.debug("%s %s", self.address_string(), format % args)


def serve(config: ServerConfig) -> ThreadingWSGIServer:
    """Bind the configured address and return the ready-to-run server.

    The caller drives it (serve_forever / shutdown); models stay unloaded
    until their endpoint's first request.
    """
    app = create_app(config)
    return make_server(
        config.host,
        config.port,
        app,
        server_class=ThreadingWSGIServer,
        handler_class=_QuietHandler,
    )
