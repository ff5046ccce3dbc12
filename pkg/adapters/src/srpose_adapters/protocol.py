"""File conventions shared by every adapter task.

Input images arrive in a directory where each file is `<image_id>.<ext>`.
Results are COCO results JSON: a flat array of records carrying image_id,
category_id 1, a score, and either a bbox (plus optional mask "area") or a
51-value keypoints list. Boxes for the keypoint task arrive in the same
results format; output order must mirror input box order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .config import AdapterError

PERSON_CATEGORY = 1
NUM_KEYPOINTS = 17
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def staged_images(directory) -> list:
    """(image_id, path) pairs for a staged directory, sorted by filename."""
    directory = Path(directory)
    if not directory.is_dir():
        raise AdapterError(f"input image directory not found: {directory}")
    pairs = []
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            image_id = int(path.stem)
        except ValueError:
            raise AdapterError(f"image filename does not encode an id: {path.name}")
        pairs.append((image_id, path))
    return pairs


def load_rgb(path) -> np.ndarray:
    """Image file -> (h, w, 3) uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_png(array: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array, mode="RGB").save(path, format="PNG")


def read_boxes(path) -> list:
    """Boxes file -> list of dicts with image_id, bbox, score; order kept."""
    path = Path(path)
    if not path.is_file():
        raise AdapterError(f"boxes file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AdapterError(f"{path}: boxes file is not valid JSON: {exc}")
    if not isinstance(payload, list):
        raise AdapterError(f"{path}: boxes file must hold a JSON array")
    boxes = []
    for i, raw in enumerate(payload):
        try:
            bbox = [float(v) for v in raw["bbox"]]
            boxes.append(
                {
                    "image_id": int(raw["image_id"]),
                    "bbox": bbox,
                    "score": float(raw.get("score", 1.0)),
                }
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise AdapterError(f"{path}: malformed box entry {i}: {exc}")
        if len(bbox) != 4:
            raise AdapterError(f"{path}: box entry {i} bbox must have 4 values")
    return boxes


def detection_record(image_id: int, bbox, score: float, area: float) -> dict:
    return {
        "image_id": image_id,
        "category_id": PERSON_CATEGORY,
        "bbox": [float(v) for v in bbox],
        "area": float(area),
        "score": float(score),
    }


def keypoint_record(image_id: int, keypoints, score: float) -> dict:
    values = [float(v) for v in keypoints]
    if len(values) != NUM_KEYPOINTS * 3:
        raise AdapterError(
            f"keypoint record needs {NUM_KEYPOINTS * 3} values, got {len(values)}"
        )
    return {
        "image_id": image_id,
        "category_id": PERSON_CATEGORY,
        "keypoints": values,
        "score": float(score),
    }


def write_results(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(list(records)), encoding="utf-8")
