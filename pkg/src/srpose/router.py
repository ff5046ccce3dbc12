"""Threshold-routed top-down pose pipeline.

Every input image is super-resolved by an integer factor r and persons are
detected once, on the SR image. Each detection is then routed by its initial
segmentation area (SR mask area / r^2): persons at or below the area
threshold keep the SR image for the keypoint stage, larger persons fall back
to the original image with the detection box divided by r. All emitted
keypoints are in the ORIGINAL image's coordinate frame; SR-branch outputs are
divided by r on emission.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import coco
from .backends import BackendError, stage_images

log = logging.getLogger(__name__)

BRANCH_SR = "sr"
BRANCH_ORIGINAL = "original"

DEFAULT_SCALE = 4
DEFAULT_AREA_THRESHOLD = 3500.0  # px^2, original-image units
MAX_FAILURE_FRACTION = 0.10


class PipelineError(Exception):
    """The run as a whole is unusable (not a single-image failure)."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = tuple(failures)


@dataclass(frozen=True)
class RouterConfig:
    scale: int = DEFAULT_SCALE  # SR upscale ratio r
    area_threshold: float = DEFAULT_AREA_THRESHOLD  # T; math.inf = always SR

    def __post_init__(self):
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValueError(f"scale must be an integer >= 1: {self.scale}")
        if math.isnan(self.area_threshold) or self.area_threshold < 0:
            raise ValueError(
                f"area threshold must be >= 0: {self.area_threshold}"
            )


@dataclass(frozen=True)
class RouteDecision:
    """One detection's branch assignment, in ledger form.

    `bbox` is the box handed to the keypoint stage, in the branch image's
    coordinates: the detected SR box on the SR branch, the same box divided
    by r on the ORIGINAL branch. `detection_index` is the detection's
    position in the detector's per-image output order.
    """

    image_id: int
    detection_index: int
    sr_area: float  # detected area on the SR image
    initial_area: float  # sr_area / r^2
    branch: str
    bbox: tuple
    area_from_mask: bool = True  # False: bbox-area fallback was used

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "detection_index": self.detection_index,
            "sr_area": self.sr_area,
            "initial_area": self.initial_area,
            "branch": self.branch,
            "bbox": list(self.bbox),
            "area_from_mask": self.area_from_mask,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RouteDecision":
        return cls(
            image_id=int(raw["image_id"]),
            detection_index=int(raw["detection_index"]),
            sr_area=float(raw["sr_area"]),
            initial_area=float(raw["initial_area"]),
            branch=str(raw["branch"]),
            bbox=tuple(float(v) for v in raw["bbox"]),
            area_from_mask=bool(raw.get("area_from_mask", True)),
        )


@dataclass(frozen=True)
class ImageFailure:
    image_id: int
    stage: str  # upscale | detect | keypoints | parse
    message: str


@dataclass
class PipelineResult:
    keypoints: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def route(detections, config: RouterConfig, image_id=None) -> list:
    """Assign each detection to the SR or ORIGINAL branch.

    Detections are boxes on the SR image. A detection without a mask area
    falls back to its bbox area (w*h) with a warning. Branch rule: initial
    area <= threshold stays on SR; above it the keypoint stage gets the
    original image and the box divided by r. Decisions preserve input order.
    """
    r = config.scale
    decisions = []
    for index, det in enumerate(detections):
        if image_id is not None and det.image_id != image_id:
            raise ValueError(
                f"detection {index} belongs to image {det.image_id}, "
                f"expected {image_id}"
            )
        from_mask = det.area is not None
        sr_area = float(det.area) if from_mask else det.bbox[2] * det.bbox[3]
        if not from_mask:
            log.warning(
                "image %s detection %d has no mask area; using bbox area",
                det.image_id,
                index,
            )
        initial_area = sr_area / (r * r)
        if initial_area <= config.area_threshold:
            branch = BRANCH_SR
            bbox = tuple(float(v) for v in det.bbox)
        else:
            branch = BRANCH_ORIGINAL
            bbox = tuple(float(v) / r for v in det.bbox)
        decisions.append(
            RouteDecision(
                image_id=det.image_id,
                detection_index=index,
                sr_area=sr_area,
                initial_area=initial_area,
                branch=branch,
                bbox=bbox,
                area_from_mask=from_mask,
            )
        )
    return decisions


def write_ledger(decisions, path) -> None:
    """One JSON object per line, in the order given."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for dec in decisions:
            fh.write(json.dumps(dec.to_dict()) + "\n")


def read_ledger(path) -> list:
    decisions = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                decisions.append(RouteDecision.from_dict(json.loads(line)))
    return decisions


def _scale_keypoints(kps, factor: float) -> tuple:
    """Scale the x/y of 17 (x, y, c) triples, leaving confidences alone."""
    out = list(kps)
    for i in range(0, len(out), 3):
        out[i] *= factor
        out[i + 1] *= factor
    return tuple(out)


def _run_keypoint_stage(backend, image_dir, boxes, work_dir, tag, image_id):
    """Invoke the keypoint backend on one image dir and pair outputs to boxes.

    The protocol guarantees one keypoint record per input box in box-file
    order, which is what makes the pairing here sound.
    """
    boxes_file = Path(work_dir) / f"{tag}_boxes.json"
    out_file = Path(work_dir) / f"{tag}_keypoints.json"
    coco.write_results(boxes, boxes_file)
    backend.keypoints(image_dir, out_file, boxes_file)
    records = [
        rec
        for rec in coco.parse_results(out_file, known_image_ids={image_id})
        if isinstance(rec, coco.KeypointRecord)
    ]
    if len(records) != len(boxes):
        raise BackendError(
            f"keypoint backend returned {len(records)} records "
            f"for {len(boxes)} boxes on image {image_id}"
        )
    return records


def _process_image(image_id, src_path, config, backends, image_root):
    """SR -> detect -> route -> keypoints for one image.

    Returns (keypoint records in detection order, decisions).
    """
    image_root = Path(image_root)
    in_dir = image_root / "in"
    sr_dir = image_root / "sr"
    stage_images({image_id: src_path}, in_dir)
    backends.upscaler.upscale(in_dir, sr_dir, config.scale)

    det_file = image_root / "detections.json"
    backends.detector.detect(sr_dir, det_file)
    detections = [
        rec
        for rec in coco.parse_results(det_file, known_image_ids={image_id})
        if isinstance(rec, coco.DetectionRecord)
    ]
    decisions = route(detections, config, image_id=image_id)

    slots = [None] * len(decisions)
    for branch, image_dir, out_scale in (
        (BRANCH_SR, sr_dir, 1.0 / config.scale),
        (BRANCH_ORIGINAL, in_dir, 1.0),
    ):
        picked = [
            (i, dec) for i, dec in enumerate(decisions) if dec.branch == branch
        ]
        if not picked:
            continue
        boxes = [
            coco.DetectionRecord(
                image_id=image_id, bbox=dec.bbox, score=detections[i].score
            )
            for i, dec in picked
        ]
        records = _run_keypoint_stage(
            backends.keypoints, image_dir, boxes, image_root, branch, image_id
        )
        for (slot, _), rec in zip(picked, records):
            kps = (
                _scale_keypoints(rec.keypoints, out_scale)
                if out_scale != 1.0
                else rec.keypoints
            )
            slots[slot] = coco.KeypointRecord(
                image_id=image_id, keypoints=kps, score=rec.score
            )
    return [rec for rec in slots if rec is not None], decisions


@dataclass
class PipelineBackends:
    upscaler: object
    detector: object
    keypoints: object


def _run_over_images(image_paths, work_dir, workers, worker):
    """Drive `worker(image_id, path, image_root)` across images.

    Results merge in image-id order regardless of scheduling. Returns
    (per-image results dict, failures list). Raises PipelineError when more
    than MAX_FAILURE_FRACTION of images fail.
    """
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    ids = sorted(image_paths)
    results: dict = {}
    failures = []

    def attempt(image_id):
        image_root = work_dir / str(image_id)
        image_root.mkdir(parents=True, exist_ok=True)
        return worker(image_id, image_paths[image_id], image_root)

    if workers is None:
        workers = min(32, os.cpu_count() or 1)
    if workers <= 1 or len(ids) <= 1:
        outcomes = []
        for image_id in ids:
            try:
                outcomes.append((image_id, attempt(image_id), None))
            except (BackendError, coco.DataError) as exc:
                outcomes.append((image_id, None, exc))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            def guarded(image_id):
                try:
                    return image_id, attempt(image_id), None
                except (BackendError, coco.DataError) as exc:
                    return image_id, None, exc

            outcomes = list(pool.map(guarded, ids))

    for image_id, value, error in outcomes:
        if error is None:
            results[image_id] = value
        else:
            stage = "parse" if isinstance(error, coco.DataError) else "backend"
            log.warning("image %s failed (%s): %s", image_id, stage, error)
            failures.append(
                ImageFailure(image_id=image_id, stage=stage, message=str(error))
            )

    if ids and len(failures) / len(ids) > MAX_FAILURE_FRACTION:
        raise PipelineError(
            f"{len(failures)}/{len(ids)} images failed, aborting",
            failures=failures,
        )
    return results, failures


def run_pipeline(
    image_paths,
    config: RouterConfig,
    backends: PipelineBackends,
    work_dir,
    workers=None,
    ledger_path=None,
) -> PipelineResult:
    """Run SR -> detect -> route -> keypoints over `image_paths`.

    `image_paths` maps image id -> original image file. Keypoints come back
    in original-image coordinates. Per-image backend failures skip that image
    and are recorded; more than 10% failures aborts. When `ledger_path` is
    given the decisions are also written there as JSON lines.
    """
    def worker(image_id, src, image_root):
        return _process_image(image_id, src, config, backends, image_root)

    results, failures = _run_over_images(image_paths, work_dir, workers, worker)

    merged = PipelineResult(failures=failures)
    for image_id in sorted(results):
        records, decisions = results[image_id]
        merged.keypoints.extend(records)
        merged.decisions.extend(decisions)
    if ledger_path is not None:
        write_ledger(merged.decisions, ledger_path)
    return merged


def run_gtbox_eval(
    dataset,
    image_paths,
    config: RouterConfig,
    keypoint_backend,
    work_dir,
    upscaler=None,
    workers=None,
) -> PipelineResult:
    """Keypoint stage in isolation: one invocation per ground-truth person.

    Each non-crowd annotation's gt box is handed to the keypoint backend on
    the image from `image_paths`. With `upscaler` set, the image is first
    super-resolved by config.scale, boxes are scaled up to match, and the
    emitted keypoints are mapped back down, so outputs are always in the
    input image's frame. Images with no usable persons are never invoked.
    """
    annotations = {}
    for image_id in image_paths:
        anns = [
            ann
            for ann in dataset.annotations_for_image(image_id)
            if not ann.iscrowd
        ]
        if anns:
            annotations[image_id] = sorted(anns, key=lambda a: a.id)
    targets = {iid: image_paths[iid] for iid in annotations}

    r = config.scale

    def worker(image_id, src, image_root):
        in_dir = image_root / "in"
        stage_images({image_id: src}, in_dir)
        if upscaler is not None:
            image_dir = image_root / "sr"
            upscaler.upscale(in_dir, image_dir, r)
            box_scale, out_scale = float(r), 1.0 / r
        else:
            image_dir = in_dir
            box_scale, out_scale = 1.0, 1.0
        boxes = [
            coco.DetectionRecord(
                image_id=image_id,
                bbox=tuple(v * box_scale for v in ann.bbox),
                score=1.0,
            )
            for ann in annotations[image_id]
        ]
        records = _run_keypoint_stage(
            keypoint_backend, image_dir, boxes, image_root, "gtbox", image_id
        )
        out = []
        for rec in records:
            kps = (
                _scale_keypoints(rec.keypoints, out_scale)
                if out_scale != 1.0
                else rec.keypoints
            )
            out.append(
                coco.KeypointRecord(
                    image_id=image_id, keypoints=kps, score=rec.score
                )
            )
        return out

    results, failures = _run_over_images(targets, work_dir, workers, worker)
    merged = PipelineResult(failures=failures)
    for image_id in sorted(results):
        merged.keypoints.extend(results[image_id])
    return merged
