"""Weightless model family for integration tests and dry runs.

Upscaling is nearest-neighbor, detection emits either scripted boxes from a
scenario file or one centered default box per image, and keypoints are a
fixed layout inside each requested box. Every output is schema-valid, so a
full pipeline can run end to end with no downloads.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import protocol
from .config import AdapterError

DEFAULT_SCORE = 0.9
KEYPOINT_SCORE = 0.85

# Normalized keypoint layout inside a box: evenly spread horizontally,
# row order shuffled by a fixed stride so the pose is not a straight line.
_LAYOUT_U = tuple((i + 0.5) / 17.0 for i in range(17))
_LAYOUT_V = tuple(((7 * i) % 17 + 0.5) / 17.0 for i in range(17))


def load_scenario(path) -> dict:
    """Scenario JSON: {"detections": {"<image_id>": [{bbox, area?, score?}]}}."""
    path = Path(path)
    if not path.is_file():
        raise AdapterError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AdapterError(f"{path}: scenario is not valid JSON: {exc}")
    if not isinstance(raw, dict) or not isinstance(raw.get("detections", {}), dict):
        raise AdapterError(f"{path}: scenario must be an object with 'detections'")
    return raw


def upscale(in_dir, out_dir, scale: int) -> None:
    if scale < 1:
        raise AdapterError(f"upscale factor must be >= 1: {scale}")
    out_dir = Path(out_dir)
    for image_id, path in protocol.staged_images(in_dir):
        pixels = protocol.load_rgb(path)
        grown = np.repeat(np.repeat(pixels, scale, axis=0), scale, axis=1)
        protocol.save_png(grown, out_dir / f"{path.stem}.png")


def detect(in_dir, out_file, scenario=None) -> None:
    scripted = (scenario or {}).get("detections", {})
    records = []
    for image_id, path in protocol.staged_images(in_dir):
        if str(image_id) in scripted:
            for box in scripted[str(image_id)]:
                bbox = [float(v) for v in box["bbox"]]
                area = float(box.get("area", bbox[2] * bbox[3]))
                records.append(
                    protocol.detection_record(
                        image_id, bbox, float(box.get("score", DEFAULT_SCORE)), area
                    )
                )
            continue
        height, width = protocol.load_rgb(path).shape[:2]
        bbox = [0.2 * width, 0.1 * height, 0.6 * width, 0.8 * height]
        # a plausible person fills roughly half its box with mask pixels
        records.append(
            protocol.detection_record(
                image_id, bbox, DEFAULT_SCORE, 0.55 * bbox[2] * bbox[3]
            )
        )
    protocol.write_results(records, out_file)


def keypoints(in_dir, out_file, boxes_file) -> None:
    staged = dict(protocol.staged_images(in_dir))
    records = []
    for box in protocol.read_boxes(boxes_file):
        if box["image_id"] not in staged:
            raise AdapterError(
                f"boxes reference image {box['image_id']} which was not staged"
            )
        x, y, w, h = box["bbox"]
        values = []
        for u, v in zip(_LAYOUT_U, _LAYOUT_V):
            values.extend((x + u * w, y + v * h, KEYPOINT_SCORE))
        records.append(
            protocol.keypoint_record(box["image_id"], values, KEYPOINT_SCORE)
        )
    protocol.write_results(records, out_file)
