"""Start the scoring service for one checkpoint."""
from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import create_app
from .model import MaskScorer, ModelLoadError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fillmask-scorer")
    parser.add_argument("--model", required=True, help="checkpoint name or path")
    parser.add_argument("--mask-token", help="override the model's mask token string")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8130)
    args = parser.parse_args(argv)

    try:
        scorer = MaskScorer(args.model, mask_token=args.mask_token)
    except ModelLoadError as exc:
        print(f"refusing to start: {exc}", file=sys.stderr)
        return 1

    uvicorn.run(create_app(scorer), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
