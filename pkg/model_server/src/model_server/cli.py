"""CLI: serve a classifier over the oracle wire protocol.

    model-server serve --model model.json --transport tcp:9000
    model-server serve --model net.pt --input-shape 32,32,3 \
        --mean 0.4914,0.4822,0.4465 --std 0.2470,0.2435,0.2616 \
        --transport stdio
"""

from __future__ import annotations

import argparse
import logging
import sys

from .models import ModelLoadError, load_model
from .server import serve_stdio, serve_tcp

log = logging.getLogger("model_server")


def _floats(text: str | None):
    if text is None:
        return None
    return [float(v) for v in text.split(",")]


def _shape(text: str | None):
    if text is None:
        return None
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("input shape must be H,W,C")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-server",
        description="Serve a classifier over the line-delimited JSON oracle protocol.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("serve", help="serve one model until EOF or SIGTERM")
    p.add_argument("--model", required=True,
                   help="model file: .json (linear softmax) or .pt/.pth (TorchScript)")
    p.add_argument("--transport", default="stdio",
                   help="stdio or tcp:PORT (port 0 picks a free port)")
    p.add_argument("--input-shape", type=_shape, default=None,
                   help="H,W,C (required for TorchScript models)")
    p.add_argument("--mean", default=None, help="per-channel normalization mean, comma separated")
    p.add_argument("--std", default=None, help="per-channel normalization std, comma separated")
    p.add_argument("--device", default="cpu", help="device for framework models")
    p.set_defaults(func=cmd_serve)
    return parser


def cmd_serve(args) -> int:
    try:
        model = load_model(
            args.model,
            input_shape=args.input_shape,
            mean=_floats(args.mean),
            std=_floats(args.std),
            device=args.device,
        )
    except ModelLoadError as err:
        log.error("%s", err)
        return 1
    transport = args.transport
    if transport == "stdio":
        serve_stdio(model)
        return 0
    if transport.startswith("tcp:"):
        port = int(transport[len("tcp:"):])
        serve_tcp(model, port=port)
        return 0
    log.error("unknown transport %r (want stdio or tcp:PORT)", transport)
    return 1


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
