"""Bridge CLI: move latents between the codec's GMLT files and a pipeline.

`generate` reads a (watermarked) latent and produces an image; `invert`
estimates the latent behind an image and writes it back as GMLT for
detection. Exit codes: 0 success, 1 usage, 2 I/O or format failure,
3 pipeline failure.
"""

from __future__ import annotations

import argparse
import sys

from .gmlt import LatentFormatError, read_latent, write_latent
from .pipelines import BridgeConfig, make_pipeline


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="gmark-bridge", description="latent-file bridge to a diffusion pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="latent file -> image")
    g.add_argument("--model", default="mock", help="'mock' or a diffusers model id/path")
    g.add_argument("--steps", type=int, default=50)
    g.add_argument("--guidance", type=float, default=7.5)
    g.add_argument("--prompt", default="")
    g.add_argument("--in", dest="in_path", required=True, help="input latent (GMLT)")
    g.add_argument("--out", required=True, help="output image path")

    i = sub.add_parser("invert", help="image -> estimated latent file")
    i.add_argument("--model", default="mock")
    i.add_argument("--steps", type=int, default=50)
    i.add_argument("--guidance", type=float, default=0.0)
    i.add_argument("--in", dest="in_path", required=True, help="input image path")
    i.add_argument("--out", required=True, help="output latent (GMLT)")
    return p


def cmd_generate(args) -> int:
    latent = read_latent(args.in_path)  # validate before any model work
    config = BridgeConfig(
        model=args.model, generation_steps=args.steps, generation_guidance=args.guidance
    )
    pipeline = make_pipeline(config)
    pipeline.generate(latent, args.prompt, args.out)
    print(f"wrote image {args.out}")
    return 0


def cmd_invert(args) -> int:
    config = BridgeConfig(
        model=args.model, inversion_steps=args.steps, inversion_guidance=args.guidance
    )
    pipeline = make_pipeline(config)
    latent = pipeline.invert(args.in_path)
    write_latent(latent, args.out)
    print(f"wrote latent {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        if args.command == "generate":
            return cmd_generate(args)
        return cmd_invert(args)
    except LatentFormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except RuntimeError as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
