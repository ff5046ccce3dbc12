"""Command-line entry point serving the backend task protocol.

Every invocation handles exactly one task over a staged directory:

    srpose-adapter --family stub --task upscale --input lr/ --output sr/ --scale 2
    srpose-adapter --family stub --task detect --input sr/ --output boxes.json
    srpose-adapter --family stub --task keypoints --input sr/ --output kp.json \
        --boxes boxes.json

Success exits 0; any failure prints one diagnostic line to stderr and
exits 1 so callers can surface it verbatim.
"""

from __future__ import annotations

import argparse
import sys

from .config import FAMILIES, AdapterConfig, AdapterError
from . import stub


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srpose-adapter",
        description="Serve upscale/detect/keypoints tasks over staged images.",
    )
    parser.add_argument(
        "--family",
        default="stub",
        choices=sorted(FAMILIES),
        help="model family to run (default: stub)",
    )
    parser.add_argument(
        "--task",
        required=True,
        choices=["upscale", "detect", "keypoints"],
        help="which protocol task to perform",
    )
    parser.add_argument("--input", required=True, help="staged image directory")
    parser.add_argument(
        "--output",
        required=True,
        help="output directory (upscale) or results file (detect/keypoints)",
    )
    parser.add_argument(
        "--scale", type=int, help="integer upscale factor (upscale task)"
    )
    parser.add_argument(
        "--boxes", help="detection results file to pose (keypoints task)"
    )
    parser.add_argument(
        "--weights", help="local weights file for torch-backed families"
    )
    parser.add_argument(
        "--device", default="cpu", help="torch device string (default: cpu)"
    )
    parser.add_argument(
        "--batch-size",
        type=int,
        default=1,
        help="images per inference batch (default: 1)",
    )
    parser.add_argument(
        "--scenario",
        help="JSON file of scripted detections for the stub family",
    )
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    config = AdapterConfig(
        family=args.family,
        weights=args.weights,
        device=args.device,
        batch_size=args.batch_size,
    )
    if not config.supports(args.task):
        raise AdapterError(
            f"family {config.family!r} does not serve task {args.task!r}"
        )
    if args.task == "upscale" and args.scale is None:
        raise AdapterError("upscale task needs --scale")
    if args.task == "keypoints" and args.boxes is None:
        raise AdapterError("keypoints task needs --boxes")

    if config.family == "stub":
        scenario = stub.load_scenario(args.scenario) if args.scenario else None
        if args.task == "upscale":
            stub.upscale(args.input, args.output, args.scale)
        elif args.task == "detect":
            stub.detect(args.input, args.output, scenario)
        else:
            stub.keypoints(args.input, args.output, args.boxes)
        return

    from . import torch_models

    if args.task == "upscale":
        torch_models.upscale_torchscript(config, args.input, args.output, args.scale)
    elif args.task == "detect":
        torch_models.detect_maskrcnn(config, args.input, args.output)
    else:
        torch_models.keypoints_keypointrcnn(
            config, args.input, args.output, args.boxes
        )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _dispatch(args)
    except AdapterError as exc:
        print(f"srpose-adapter: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"srpose-adapter: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
