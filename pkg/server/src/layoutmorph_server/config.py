"""Server configuration: a YAML file with environment overrides.

Structural problems (unknown endpoints, bad ports, unparsable resize
policies) surface here; whether a registry entry's model identifier is
actually loadable is checked when the model registry is built, so a bad
config still fails at startup rather than on the first request.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import yaml

from layoutmorph.core import CategoryPalette
from layoutmorph.scenegen import default_palette

ENDPOINTS = ("segment", "inpaint", "translate", "caption")

ENV_PREFIX = "LAYOUTMORPH_SERVER_"

DEFAULT_PORT = 8700
DEFAULT_MAX_REQUEST_BYTES = 32 * 1024 * 1024
DEFAULT_QUEUE_DEPTH = 8

_CONFIG_KEYS = (
    "host",
    "port",
    "models",
    "palette_path",
    "auth_token",
    "max_request_bytes",
    "queue_depth",
    "resize_policy",
)


class ConfigError(Exception):
    """Raised for configuration the server cannot start from."""


@dataclass(frozen=True)
class ResizePolicy:
    """How the translate stage adapts map resolution, if at all.

    "none" feeds maps to the model at native resolution; "fixed:WxH"
    nearest-neighbor resizes maps to W x H before the model and resizes
    the model's outputs back to native dimensions.
    """

    mode: str = "none"
    width: int = 0
    height: int = 0

    @classmethod
    def parse(cls, text: str) -> "ResizePolicy":
        if text == "none":
            return cls()
        if text.startswith("fixed:"):
            try:
                w, h = text[len("fixed:"):].split("x", 1)
                width, height = int(w), int(h)
            except ValueError as exc:
                raise ConfigError(f"bad resize_policy {text!r}, expected fixed:WxH") from exc
            if width < 1 or height < 1:
                raise ConfigError(f"resize_policy dimensions must be >= 1, got {text!r}")
            return cls(mode="fixed", width=width, height=height)
        raise ConfigError(f"unknown resize_policy {text!r}")

    def __str__(self) -> str:
        if self.mode == "none":
            return "none"
        return f"fixed:{self.width}x{self.height}"


@dataclass(frozen=True)
class ModelEntry:
    """One registry row: which model serves an endpoint, and on what device."""

    model: str
    device: str = "cpu"
    options: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.model:
            raise ConfigError("model identifier must be non-empty")
        object.__setattr__(self, "options", dict(self.options))


def default_models() -> dict[str, ModelEntry]:
    """Advertise every endpoint, served by the deterministic synthetic stack."""
    return {endpoint: ModelEntry(model="synthetic") for endpoint in ENDPOINTS}


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    models: Mapping[str, ModelEntry] = field(default_factory=default_models)
    palette_path: Optional[str] = None
    auth_token: Optional[str] = None
    max_request_bytes: int = DEFAULT_MAX_REQUEST_BYTES
    queue_depth: int = DEFAULT_QUEUE_DEPTH
    resize_policy: ResizePolicy = ResizePolicy()

    def __post_init__(self):
        if not 0 <= self.port <= 65535:
            raise ConfigError(f"port must be in [0, 65535], got {self.port}")
        if self.max_request_bytes < 1:
            raise ConfigError(f"max_request_bytes must be >= 1, got {self.max_request_bytes}")
        if self.queue_depth < 1:
            raise ConfigError(f"queue_depth must be >= 1, got {self.queue_depth}")
        models = dict(self.models)
        for endpoint in models:
            if endpoint not in ENDPOINTS:
                raise ConfigError(
                    f"unknown endpoint {endpoint!r}, expected one of {', '.join(ENDPOINTS)}"
                )
        object.__setattr__(self, "models", models)


def _model_entry(endpoint: str, obj) -> ModelEntry:
    if isinstance(obj, str):
        return ModelEntry(model=obj)
    if isinstance(obj, Mapping):
        unknown = set(obj) - {"model", "device", "options"}
        if unknown:
            raise ConfigError(
                f"unknown keys in models.{endpoint}: {', '.join(sorted(unknown))}"
            )
        return ModelEntry(
            model=obj.get("model", ""),
            device=str(obj.get("device", "cpu")),
            options=obj.get("options") or {},
        )
    raise ConfigError(f"models.{endpoint} must be a model id or a mapping")


def load_config(path: Optional[str] = None, env: Mapping[str, str] = os.environ) -> ServerConfig:
    """Read the YAML config (optional) and apply environment overrides.

    Scalar settings honor LAYOUTMORPH_SERVER_<KEY> variables; the model
    registry comes from the file (or defaults to the synthetic stack).
    """
    doc: Mapping = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, Mapping):
            raise ConfigError(f"config root must be a mapping, got {type(doc).__name__}")
    unknown = set(doc) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def scalar(key: str, default, cast):
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            value, source = env[env_key], env_key
        elif key in doc and doc[key] is not None:
            value, source = doc[key], key
        else:
            return default
        try:
            return cast(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {source}: {value!r}") from exc

    models_doc = doc.get("models")
    if models_doc is None:
        models = default_models()
    elif isinstance(models_doc, Mapping):
        models = {str(ep): _model_entry(str(ep), entry) for ep, entry in models_doc.items()}
    else:
        raise ConfigError("models must be a mapping of endpoint to model entry")

    return ServerConfig(
        host=scalar("host", "127.0.0.1", str),
        port=scalar("port", DEFAULT_PORT, int),
        models=models,
        palette_path=scalar("palette_path", None, str),
        auth_token=scalar("auth_token", None, str),
        max_request_bytes=scalar("max_request_bytes", DEFAULT_MAX_REQUEST_BYTES, int),
        queue_depth=scalar("queue_depth", DEFAULT_QUEUE_DEPTH, int),
        resize_policy=scalar("resize_policy", ResizePolicy(), ResizePolicy.parse),
    )


def canonical_palette_bytes(palette: CategoryPalette) -> bytes:
    """The byte encoding whose sha256 identifies a palette with no file."""
    return json.dumps(palette.to_json_obj(), sort_keys=True, separators=(",", ":")).encode("ascii")


def load_palette(config: ServerConfig) -> tuple[CategoryPalette, str]:
    """Resolve the palette plus the sha256 of its byte-for-byte encoding.

    Clients compare the digest (surfaced by /healthz) against their own
    palette file to confirm both sides share the same vocabulary.
    """
    if config.palette_path is not None:
        raw = Path(config.palette_path).read_bytes()
        try:
            palette = CategoryPalette.from_json_obj(json.loads(raw))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"unusable palette at {config.palette_path}: {exc}") from exc
    else:
        palette = default_palette()
        raw = canonical_palette_bytes(palette)
    return palette, hashlib.sha256(raw).hexdigest()
