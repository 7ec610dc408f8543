import threading

import pytest

from layoutmorph.scenegen import default_palette
from layoutmorph_server.app import serve
from layoutmorph_server.config import ServerConfig, canonical_palette_bytes
from layoutmorph_server import registry as registry_mod


@pytest.fixture(autouse=True)
def isolated_loaders(monkeypatch):
    # fake loaders registered by a test must not leak into other tests
    monkeypatch.setattr(registry_mod, "_LOADERS", dict(registry_mod._LOADERS))


@pytest.fixture
def palette_file(tmp_path):
    path = tmp_path / "palette.json"
    path.write_bytes(canonical_palette_bytes(default_palette()))
    return path


@pytest.fixture
def make_config(palette_file):
    def build(**kw) -> ServerConfig:
        kw.setdefault("host", "127.0.0.1")
        kw.setdefault("port", 0)
        kw.setdefault("palette_path", str(palette_file))
        return ServerConfig(**kw)

    return build


@pytest.fixture
def run_server():
    """Start a server on an ephemeral port; returns its base URL."""
    running = []

    def start(config: ServerConfig) -> str:
        server = serve(config)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        running.append((server, thread))
        host, port = server.server_address[:2]
        return f"http://{host}:{port}"

    yield start
    for server, thread in running:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)
