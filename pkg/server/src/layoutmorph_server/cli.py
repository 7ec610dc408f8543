"""Command line entry point: load config, bind, serve until interrupted."""

from __future__ import annotations

import argparse
import logging
from typing import Optional, Sequence

from .app import serve
from .config import ConfigError, load_config

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layoutmorph-server",
        description="Reference model-backend server for the layoutmorph wire protocol",
    )
    parser.add_argument("--config", help="YAML config path (env vars override scalars)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        server = serve(config)
    except (ConfigError, OSError) as exc:
        logger.error("%s", exc)
        return 1
    host, port = server.server_address[:2]
    logger.info("serving on http://%s:%d", host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
