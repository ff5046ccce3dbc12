"""COCO-style keypoint dataset parsing, geometry, rescaling, and results I/O.

Only the person category is retained. Datasets are immutable after parsing
and safe to share across workers; every function here is pure.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Union

logger = logging.getLogger(__name__)

PERSON_CATEGORY_ID = 1
NUM_KEYPOINTS = 17

# Dimension rounding can leave coordinates hanging over the edge by up to
# half a pixel after rescaling; parse-time bounds checks allow that much.
KEYPOINT_BOUNDS_SLACK = 0.5


class DataError(Exception):
    """Base class for dataset and results file errors."""


class ParseError(DataError):
    """File is not readable as COCO-format JSON."""


class ValidationError(DataError):
    """File parsed but violates an invariant."""


class GeometryError(DataError):
    """Segmentation geometry is malformed."""


# RLE segmentations are stored as {"size": [h, w], "counts": [...]} with
# uncompressed integer counts over the column-major (Fortran) pixel order,
# alternating background/foreground runs starting with background.
Rle = dict
Segmentation = Union[list, Rle, None]


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_name: str


@dataclass(frozen=True)
class PersonAnnotation:
    id: int
    image_id: int
    keypoints: tuple  # 51 floats: x1, y1, v1, ..., x17, y17, v17
    bbox: tuple  # (x, y, w, h)
    area: float
    segmentation: Segmentation = None
    iscrowd: bool = False

    def visible_count(self) -> int:
        return sum(1 for v in self.keypoints[2::3] if v > 0)


@dataclass(frozen=True)
class DetectionRecord:
    image_id: int
    bbox: tuple  # (x, y, w, h)
    score: float
    area: float | None = None  # instance mask area when the backend provides one


@dataclass(frozen=True)
class KeypointRecord:
    image_id: int
    keypoints: tuple  # 51 floats: x1, y1, c1, ..., x17, y17, c17
    score: float


ResultRecord = Union[DetectionRecord, KeypointRecord]


@dataclass
class Dataset:
    images: tuple
    annotations: tuple

    @cached_property
    def images_by_id(self) -> dict:
        return {img.id: img for img in self.images}

    @cached_property
    def _annotation_index(self) -> dict:
        index: dict[int, list] = {}
        for ann in self.annotations:
            index.setdefault(ann.image_id, []).append(ann)
        return index

    def annotations_for_image(self, image_id: int) -> list:
        return list(self._annotation_index.get(image_id, []))


def polygon_area(polygon: Sequence[float]) -> float:
    """Absolute shoelace area of one flat [x0, y0, x1, y1, ...] polygon."""
    if len(polygon) < 6 or len(polygon) % 2 != 0:
        raise GeometryError(
            f"polygon needs at least 3 (x, y) vertices, got {len(polygon)} values"
        )
    xs = polygon[0::2]
    ys = polygon[1::2]
    n = len(xs)
    acc = 0.0
    for i in range(n):
        j = (i + 1) % n
        acc += xs[i] * ys[j] - xs[j] * ys[i]
    return abs(acc) / 2.0


def rle_area(rle: Rle) -> float:
    """Total foreground pixels of an uncompressed RLE mask.

    Counts alternate background/foreground starting with background and must
    cover the size grid exactly.
    """
    try:
        height, width = rle["size"]
        counts = rle["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise GeometryError(f"malformed RLE object: {exc}") from exc
    if any(c < 0 for c in counts):
        raise GeometryError("RLE counts must be non-negative")
    total = sum(counts)
    if total != width * height:
        raise GeometryError(
            f"RLE counts cover {total} pixels, grid has {width * height}"
        )
    return float(sum(counts[1::2]))


def rle_decode(rle: Rle):
    """Decode an uncompressed RLE into a (height, width) uint8 mask.

    Runs follow column-major (Fortran) pixel order, like COCO masks.
    """
    import numpy as np

    height, width = rle["size"]
    counts = rle["counts"]
    if sum(counts) != width * height:
        raise GeometryError("RLE counts do not cover the grid")
    flat = np.zeros(width * height, dtype=np.uint8)
    pos = 0
    value = 0
    for run in counts:
        if value:
            flat[pos : pos + run] = 1
        pos += run
        value ^= 1
    return flat.reshape((width, height)).T


def segmentation_area(segmentation: Segmentation) -> float:
    """Area of a polygon list (component areas summed) or an RLE mask."""
    if segmentation is None:
        raise GeometryError("annotation has no segmentation")
    if isinstance(segmentation, dict):
        return rle_area(segmentation)
    if isinstance(segmentation, list) and segmentation:
        if isinstance(segmentation[0], (list, tuple)):
            return sum(polygon_area(part) for part in segmentation)
        return polygon_area(segmentation)
    raise GeometryError(f"unrecognized segmentation payload: {type(segmentation)!r}")


def scaled_dimension(value: int, factor: float) -> int:
    """Round-half-up of factor x value, never below 1 pixel."""
    return max(1, int(math.floor(value * factor + 0.5)))


def _scale_segmentation(segmentation: Segmentation, factor: float) -> Segmentation:
    if segmentation is None:
        return None
    if isinstance(segmentation, dict):
        # RLE grids cannot be rescaled without resampling the mask; the run
        # stays on its original grid and the stored area field is
        # authoritative after scaling.
        return segmentation
    if segmentation and isinstance(segmentation[0], (list, tuple)):
        return [[c * factor for c in part] for part in segmentation]
    return [c * factor for c in segmentation]


def scale_annotations(dataset: Dataset, factor: float) -> Dataset:
    """Rescale every coordinate by `factor` and every area by `factor**2`.

    Image dimensions use round-half-up with a 1 px floor. Visibility flags
    are untouched and coordinates are not re-clamped to the new bounds.
    Stored areas are scaled analytically rather than recomputed from the
    scaled geometry so subgroup membership stays stable.
    """
    if factor <= 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    if factor == 1.0:
        return dataset
    images = tuple(
        replace(
            img,
            width=scaled_dimension(img.width, factor),
            height=scaled_dimension(img.height, factor),
        )
        for img in dataset.images
    )
    annotations = []
    for ann in dataset.annotations:
        kps = list(ann.keypoints)
        for i in range(0, len(kps), 3):
            kps[i] *= factor
            kps[i + 1] *= factor
        annotations.append(
            replace(
                ann,
                keypoints=tuple(kps),
                bbox=tuple(v * factor for v in ann.bbox),
                area=ann.area * factor * factor,
                segmentation=_scale_segmentation(ann.segmentation, factor),
            )
        )
    return Dataset(images=images, annotations=tuple(annotations))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def _validate_annotation(ann: PersonAnnotation, image: ImageRecord) -> None:
    where = f"annotation {ann.id}"
    _require(
        len(ann.keypoints) == NUM_KEYPOINTS * 3,
        f"{where}: expected {NUM_KEYPOINTS} keypoint triples, "
        f"got {len(ann.keypoints)} values",
    )
    for i in range(0, len(ann.keypoints), 3):
        x, y, v = ann.keypoints[i : i + 3]
        _require(v in (0, 1, 2), f"{where}: visibility flag {v} not in {{0, 1, 2}}")
        if v > 0:
            _require(
                -KEYPOINT_BOUNDS_SLACK <= x <= image.width + KEYPOINT_BOUNDS_SLACK
                and -KEYPOINT_BOUNDS_SLACK <= y <= image.height + KEYPOINT_BOUNDS_SLACK,
                f"{where}: visible keypoint ({x}, {y}) outside "
                f"{image.width}x{image.height} image {image.id}",
            )
    _require(len(ann.bbox) == 4, f"{where}: bbox must have 4 values")
    _require(
        ann.bbox[2] >= 0 and ann.bbox[3] >= 0,
        f"{where}: bbox width/height must be non-negative",
    )
    if ann.segmentation is not None:
        _require(ann.area > 0, f"{where}: area must be positive when segmented")
    _require(math.isfinite(ann.area), f"{where}: area must be finite")


def _segmentation_from_json(raw) -> Segmentation:
    if raw in (None, [], {}):
        return None
    if isinstance(raw, dict):
        counts = raw.get("counts")
        if not isinstance(counts, list):
            raise GeometryError(
                "only uncompressed RLE (integer counts list) is supported"
            )
        return {"size": list(raw["size"]), "counts": list(counts)}
    return [list(part) for part in raw]


def parse_dataset(path) -> Dataset:
    """Parse a COCO keypoint annotation file, keeping person entries only.

    Raises ParseError with the byte offset for malformed JSON and
    ValidationError naming the offending annotation for invariant breaks.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"annotation file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}: malformed JSON at offset {exc.pos}: {exc.msg}"
        ) from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    for key in ("images", "annotations"):
        if key not in payload:
            raise ParseError(f"{path}: missing '{key}' array")

    person_ids = {PERSON_CATEGORY_ID}
    for cat in payload.get("categories", []):
        if cat.get("name") == "person":
            person_ids = {cat["id"]}
            break

    images = []
    seen = set()
    for raw in payload["images"]:
        img = ImageRecord(
            id=int(raw["id"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
            file_name=str(raw.get("file_name", "")),
        )
        _require(img.width >= 1 and img.height >= 1, f"image {img.id}: empty size")
        _require(img.id not in seen, f"image {img.id}: duplicate id")
        seen.add(img.id)
        images.append(img)
    by_id = {img.id: img for img in images}

    annotations = []
    for raw in payload["annotations"]:
        if raw.get("category_id") not in person_ids:
            continue
        ann_id = int(raw["id"])
        image_id = int(raw["image_id"])
        _require(image_id in by_id, f"annotation {ann_id}: unknown image {image_id}")
        iscrowd = bool(raw.get("iscrowd", 0))
        try:
            segmentation = _segmentation_from_json(raw.get("segmentation"))
        except GeometryError as exc:
            raise ValidationError(f"annotation {ann_id}: {exc}") from exc
        ann = PersonAnnotation(
            id=ann_id,
            image_id=image_id,
            keypoints=tuple(float(v) for v in raw.get("keypoints", [0.0] * 51)),
            bbox=tuple(float(v) for v in raw["bbox"]),
            area=float(raw["area"]),
            segmentation=segmentation,
            iscrowd=iscrowd,
        )
        _validate_annotation(ann, by_id[image_id])
        annotations.append(ann)

    return Dataset(images=tuple(images), annotations=tuple(annotations))


def write_dataset(dataset: Dataset, path) -> None:
    """Write a Dataset back out as COCO keypoint annotation JSON."""
    payload = {
        "images": [
            {
                "id": img.id,
                "width": img.width,
                "height": img.height,
                "file_name": img.file_name,
            }
            for img in dataset.images
        ],
        "annotations": [
            {
                "id": ann.id,
                "image_id": ann.image_id,
                "category_id": PERSON_CATEGORY_ID,
                "keypoints": list(ann.keypoints),
                "num_keypoints": ann.visible_count(),
                "bbox": list(ann.bbox),
                "area": ann.area,
                "segmentation": ann.segmentation
                if ann.segmentation is not None
                else [],
                "iscrowd": int(ann.iscrowd),
            }
            for ann in dataset.annotations
        ],
        "categories": [
            {"id": PERSON_CATEGORY_ID, "name": "person", "supercategory": "person"}
        ],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def write_results(records: Iterable[ResultRecord], path) -> None:
    """Write detection or keypoint records as COCO results JSON."""
    entries = []
    for rec in records:
        entry = {"image_id": rec.image_id, "category_id": PERSON_CATEGORY_ID}
        if isinstance(rec, KeypointRecord):
            entry["keypoints"] = list(rec.keypoints)
        else:
            entry["bbox"] = list(rec.bbox)
            if rec.area is not None:
                entry["area"] = rec.area
        entry["score"] = rec.score
        entries.append(entry)
    Path(path).write_text(json.dumps(entries), encoding="utf-8")


def parse_results(path, known_image_ids=None) -> list:
    """Parse a COCO results JSON into detection/keypoint records.

    When `known_image_ids` is given, records referencing other image ids
    raise ValidationError.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"results file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}: malformed JSON at offset {exc.pos}: {exc.msg}"
        ) from exc
    if not isinstance(payload, list):
        raise ParseError(f"{path}: results file must hold a JSON array")
    known = set(known_image_ids) if known_image_ids is not None else None

    records: list[ResultRecord] = []
    for i, raw in enumerate(payload):
        image_id = int(raw["image_id"])
        if known is not None and image_id not in known:
            raise ValidationError(f"results entry {i}: unknown image id {image_id}")
        if raw.get("category_id", PERSON_CATEGORY_ID) != PERSON_CATEGORY_ID:
            continue
        score = float(raw["score"])
        if not math.isfinite(score):
            raise ValidationError(f"results entry {i}: score is not finite")
        if "keypoints" in raw:
            kps = tuple(float(v) for v in raw["keypoints"])
            if len(kps) != NUM_KEYPOINTS * 3:
                raise ValidationError(
                    f"results entry {i}: expected {NUM_KEYPOINTS} keypoint triples"
                )
            if not all(math.isfinite(v) for v in kps):
                raise ValidationError(f"results entry {i}: non-finite keypoint value")
            records.append(KeypointRecord(image_id=image_id, keypoints=kps, score=score))
        elif "bbox" in raw:
            bbox = tuple(float(v) for v in raw["bbox"])
            if len(bbox) != 4 or bbox[2] < 0 or bbox[3] < 0:
                raise ValidationError(f"results entry {i}: malformed bbox")
            area = raw.get("area")
            records.append(
                DetectionRecord(
                    image_id=image_id,
                    bbox=bbox,
                    score=score,
                    area=float(area) if area is not None else None,
                )
            )
        else:
            raise ValidationError(f"results entry {i}: neither bbox nor keypoints")
    return records
