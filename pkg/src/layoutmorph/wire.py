"""Wire protocol payloads: HTTP + JSON, rasters as base64 PNG, label maps
and masks as base64 binary graymaps (P5) with inline palette JSON.

Both the client adapter and the reference server build and parse payloads
through these helpers, so the two sides cannot drift apart.
"""

from __future__ import annotations

import base64
import io
from typing import Mapping, Optional

import numpy as np
from PIL import Image

from .backends.base import SegmentationResult, TranslationParams
from .core import (
    BinaryMask,
    BoundingBox,
    CandidateSet,
    CategoryPalette,
    ObjectInstance,
    SemanticMap,
    map_from_p5,
    map_to_p5,
    mask_from_p5,
    mask_to_p5,
)
from .errors import ShapeError


# ---------------------------------------------------------------------------
# codecs


def encode_image(image: np.ndarray) -> str:
    a = np.asarray(image, dtype=np.uint8)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ShapeError(f"expected (h, w, 3) RGB raster, got {a.shape}")
    buf = io.BytesIO()
    Image.fromarray(a, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(payload: str) -> np.ndarray:
    raw = base64.b64decode(payload)
    with Image.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def encode_map(semantic_map: SemanticMap) -> str:
    return base64.b64encode(map_to_p5(semantic_map)).decode("ascii")


def decode_map(payload: str, palette: CategoryPalette) -> SemanticMap:
    return map_from_p5(base64.b64decode(payload), palette)


def encode_mask(mask: BinaryMask) -> str:
    return base64.b64encode(mask_to_p5(mask)).decode("ascii")


def decode_mask(payload: str) -> BinaryMask:
    return mask_from_p5(base64.b64decode(payload))


# ---------------------------------------------------------------------------
# structured fields


def bbox_to_obj(box: BoundingBox) -> dict:
    return {"x_min": box.x_min, "x_max": box.x_max, "y_min": box.y_min, "y_max": box.y_max}


def bbox_from_obj(obj: Mapping) -> BoundingBox:
    return BoundingBox(
        x_min=int(obj["x_min"]),
        x_max=int(obj["x_max"]),
        y_min=int(obj["y_min"]),
        y_max=int(obj["y_max"]),
    )


def instance_to_obj(inst: ObjectInstance) -> dict:
    return {
        "category": inst.category,
        "mask": encode_mask(inst.mask),
        "bbox": bbox_to_obj(inst.bbox),
        "z_order": inst.z_order,
    }


def instance_from_obj(obj: Mapping, instance_id: str) -> ObjectInstance:
    return ObjectInstance(
        instance_id=instance_id,
        category=obj["category"],
        mask=decode_mask(obj["mask"]),
        bbox=bbox_from_obj(obj["bbox"]),
        z_order=int(obj["z_order"]),
    )


# ---------------------------------------------------------------------------
# request / response bodies, one pair per endpoint


def segment_request(image: np.ndarray) -> dict:
    return {"image": encode_image(image)}


def segment_response(result: SegmentationResult) -> dict:
    return {
        "map": encode_map(result.map),
        "palette": result.map.palette.to_json_obj(),
        "instances": [instance_to_obj(i) for i in result.instances],
        "candidates": dict(result.candidates.counts),
    }


def parse_segment_response(obj: Mapping) -> SegmentationResult:
    palette = CategoryPalette.from_json_obj(obj["palette"])
    semantic_map = decode_map(obj["map"], palette)
    instances = tuple(
        instance_from_obj(o, f"obj{i:03d}") for i, o in enumerate(obj["instances"])
    )
    return SegmentationResult(
        map=semantic_map,
        instances=instances,
        candidates=CandidateSet({k: int(v) for k, v in obj["candidates"].items()}),
    )


def inpaint_request(image: np.ndarray, region: BinaryMask) -> dict:
    return {"image": encode_image(image), "region": encode_mask(region)}


def inpaint_response(image: np.ndarray) -> dict:
    return {"image": encode_image(image)}


def parse_inpaint_response(obj: Mapping) -> np.ndarray:
    return decode_image(obj["image"])


def translate_request(semantic_map: SemanticMap, params: TranslationParams) -> dict:
    return {
        "map": encode_map(semantic_map),
        "palette": semantic_map.palette.to_json_obj(),
        "guidance_strength": params.guidance_strength,
        "diffusion_steps": params.diffusion_steps,
        "samples": params.samples_per_map,
    }


def parse_translate_request(obj: Mapping) -> tuple[SemanticMap, TranslationParams]:
    palette = CategoryPalette.from_json_obj(obj["palette"])
    params = TranslationParams(
        guidance_strength=float(obj["guidance_strength"]),
        diffusion_steps=int(obj["diffusion_steps"]),
        samples_per_map=int(obj["samples"]),
    )
    return decode_map(obj["map"], palette), params


def translate_response(images: list[np.ndarray]) -> dict:
    return {"images": [encode_image(im) for im in images]}


def parse_translate_response(obj: Mapping) -> list[np.ndarray]:
    return [decode_image(s) for s in obj["images"]]


def caption_request(image: np.ndarray, system_id: str) -> dict:
    return {"image": encode_image(image), "system_id": system_id}


def caption_response(caption: str) -> dict:
    return {"caption": caption}


def parse_caption_response(obj: Mapping) -> str:
    caption = obj["caption"]
    if not isinstance(caption, str) or not caption:
        raise ValueError("caption response must carry a non-empty string")
    return caption


def error_response(error: str, detail: Optional[str] = None) -> dict:
    body = {"error": error}
    if detail is not None:
        body["detail"] = detail
    return body
