"""CLI: ``modelserver --host 0.0.0.0 --port 8750 --model fixture:/path``."""

from __future__ import annotations

import argparse

import uvicorn

from .app import DEFAULT_MAX_PIXELS, ServerConfig, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="modelserver",
                                     description="Detection/segmentation HTTP service.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8750)
    parser.add_argument("--model", default="color",
                        help="adapter spec: 'color' or 'fixture:<dir>'")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-pixels", type=int, default=DEFAULT_MAX_PIXELS)
    args = parser.parse_args(argv)

    config = ServerConfig(host=args.host, port=args.port, model=args.model,
                          device=args.device, max_pixels=args.max_pixels)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
