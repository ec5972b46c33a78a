"""Command line entry point: parse flags, build the server, serve forever."""

import argparse

from .app import create_server
from .config import ServiceConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchfield-guidance",
        description="serve sketch-conditioned generation and image metrics "
                    "over HTTP")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8501)
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--stub", action="store_true",
                      help="serve the deterministic procedural backend "
                           "instead of loading models")
    mode.add_argument("--echo", action="store_true",
                      help="like --stub, but generate routes return their "
                           "input image; for protocol testing")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--ddim-steps", type=int, default=20,
                        help="default denoising step count (per-request "
                             "override allowed)")
    parser.add_argument("--cfg-weight", type=float, default=7.5,
                        help="default classifier-free guidance weight")
    parser.add_argument("--edge-threshold", type=float, default=0.25,
                        help="edge mask cut as a fraction of the peak response")
    parser.add_argument("--base-model", default=None,
                        help="override the image generation model id")
    parser.add_argument("--control-model", default=None,
                        help="override the sketch conditioning model id")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = dict(device=args.device, ddim_steps=args.ddim_steps,
                     cfg_weight=args.cfg_weight,
                     edge_threshold=args.edge_threshold)
    if args.base_model:
        overrides["base_model"] = args.base_model
    if args.control_model:
        overrides["control_model"] = args.control_model
    config = ServiceConfig(**overrides)

    mode = "echo" if args.echo else ("stub" if args.stub else "models")
    server = create_server(config, mode=mode, host=args.host, port=args.port)
    print(f"serving {mode} backend on http://{args.host}:{server.server_port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
