"""Reference HTTP model-backend server for the layoutmorph wire protocol.

Wraps segmentation, inpainting, mask-to-image, and captioning models
behind the same JSON endpoints the toolkit's HTTP adapter speaks, with a
deterministic synthetic model stack built in so the protocol is testable
without any real model weights.
"""

from .app import ThreadingWSGIServer, WireApp, compose_detections, create_app, serve
from .config import (
    ENDPOINTS,
    ConfigError,
    ModelEntry,
    ResizePolicy,
    ServerConfig,
    canonical_palette_bytes,
    default_models,
    load_config,
    load_palette,
)
from .registry import ModelRegistry, ModelSlot, Overloaded, loader_for, register_loader

__version__ = "0.1.0"

__all__ = [
    "ENDPOINTS",
    "ConfigError",
    "ModelEntry",
    "ModelRegistry",
    "ModelSlot",
    "Overloaded",
    "ResizePolicy",
    "ServerConfig",
    "ThreadingWSGIServer",
    "WireApp",
    "canonical_palette_bytes",
    "compose_detections",
    "create_app",
    "default_models",
    "load_config",
    "load_palette",
    "loader_for",
    "register_loader",
    "serve",
]
