"""Model backends for the srpose pipeline, spoken over its file protocol.

Every adapter is a standalone executable: images go in as a directory of
`<image_id>.<ext>` files, results come out as COCO results JSON, and the
only coupling to the evaluation harness is the command line

    srpose-adapter --family <name> --task {upscale|detect|keypoints}
                   --input <path> --output <path> [--scale r] [--boxes <file>]

The "stub" family runs with no model weights and exists so integration
tests never download anything; the torch families wrap real networks.
"""

__version__ = "0.1.0"
