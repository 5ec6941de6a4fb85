"""Command-line launcher for the sidecar service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .service import SidecarError, serve


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kgsidecar", description=__doc__)
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8800)
    args = parser.parse_args(argv)

    config = None
    if args.config is not None:
        config = json.loads(args.config.read_text(encoding="utf-8"))
    try:
        serve(config, host=args.host, port=args.port)
    except SidecarError as exc:
        print(f"refusing to start: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
