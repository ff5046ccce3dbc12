#!/usr/bin/env python3
"""Download torchvision checkpoints into adapters/weights/.

Nothing in the adapter package downloads weights on its own: every model
family takes an explicit --weights path and fails loudly when the file is
missing. This script is the one sanctioned way to populate that directory.

    python3 scripts/fetch_weights.py --list
    python3 scripts/fetch_weights.py detector keypoints
    python3 scripts/fetch_weights.py --dest /some/dir detector

Super-resolution families (esrgan, usrnet) are not listed here because
they load TorchScript archives rather than state dicts. Export one from
any trained model and point --weights at it:

    scripted = torch.jit.trace(model.eval(), torch.rand(1, 3, 32, 32))
    scripted.save("weights/esrgan_x2.pt")

The archive must map a (1, 3, h, w) float tensor in [0, 1] to
(1, 3, h * scale, w * scale).
"""

from __future__ import annotations

import argparse
import sys
import urllib.request
from pathlib import Path

CHECKPOINTS = {
    "detector": (
        "maskrcnn_resnet50_fpn_coco.pth",
        "https://download.pytorch.org/models/maskrcnn_resnet50_fpn_coco-bf2d0c1e.pth",
    ),
    "keypoints": (
        "keypointrcnn_resnet50_fpn_coco.pth",
        "https://download.pytorch.org/models/keypointrcnn_resnet50_fpn_coco-fc266e95.pth",
    ),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "families",
        nargs="*",
        choices=[*sorted(CHECKPOINTS), []],
        help="which checkpoints to fetch (default: none; use --list to see them)",
    )
    parser.add_argument(
        "--dest",
        type=Path,
        default=Path(__file__).resolve().parent.parent / "weights",
        help="directory to store checkpoints in (default: adapters/weights/)",
    )
    parser.add_argument(
        "--list", action="store_true", help="show the known checkpoints and exit"
    )
    args = parser.parse_args(argv)

    if args.list or not args.families:
        for family, (filename, url) in sorted(CHECKPOINTS.items()):
            print(f"{family}: {filename}\n    {url}")
        return 0

    args.dest.mkdir(parents=True, exist_ok=True)
    for family in args.families:
        filename, url = CHECKPOINTS[family]
        target = args.dest / filename
        if target.is_file():
            print(f"{family}: {target} already present, skipping")
            continue
        print(f"{family}: fetching {url}")
        urllib.request.urlretrieve(url, target)
        print(f"{family}: saved {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
